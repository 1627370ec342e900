"""Jump-velocity regression from multi-view jump clips.

Core pieces: a dependency-light numerics core with hand-written gradients
(`numerics`), a windowed-attention backbone (`swin`), the multi-view fusion
regressor (`fusion`), SVR and dense-head baselines over frozen conv features
(`baselines`), a synthetic jump-clip generator with exact velocity labels
(`synthdata`), dataset/fold/sampler utilities (`datasets`), and the training
plus cross-validation harness (`harness`). `jumpvel.cli` is the command-line
front end.
"""

from .baselines import ConvFeatConfig, SvrConfig, SvrModel, svr_fit, svr_predict
from .datasets import (
    DatasetIndex,
    FoldSplit,
    SamplerConfig,
    VideoSample,
    balanced_batches,
    load_manifest,
    load_sample,
    split_folds,
)
from .fusion import FusionConfig, FusionModel, build_fusion_model, predict
from .harness import MetricsReport, TrainConfig, cross_validate, mae, pearson_r
from .numerics import Adam, AdamState, Parameter, grad_check, l1_loss
from .swin import SwinConfig
from .synthdata import SyntheticSpec, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AdamState",
    "ConvFeatConfig",
    "DatasetIndex",
    "FoldSplit",
    "FusionConfig",
    "FusionModel",
    "MetricsReport",
    "Parameter",
    "SamplerConfig",
    "SvrConfig",
    "SvrModel",
    "SwinConfig",
    "SyntheticSpec",
    "TrainConfig",
    "VideoSample",
    "balanced_batches",
    "build_fusion_model",
    "cross_validate",
    "generate_dataset",
    "grad_check",
    "l1_loss",
    "load_manifest",
    "load_sample",
    "mae",
    "pearson_r",
    "predict",
    "split_folds",
    "svr_fit",
    "svr_predict",
]
