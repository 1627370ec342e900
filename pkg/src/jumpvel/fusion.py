"""Multi-view regression head: per-frame backbone features -> per-view
temporal mean -> per-view dense layer -> concatenation (left, center, right)
-> final dense layer -> scalar velocity.

The backbone is shared across views; per-view heads are distinct. Training
uses the batched forward/backward over a (samples, views, frames) stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vten
from .datasets import VideoSample, selection_views
from .errors import ConfigError, DimensionError, EmptyClipError, InputError
from .numerics import Parameter, linear, linear_backward, trunc_normal
from .swin import (
    BackboneParams,
    SwinConfig,
    backbone_backward,
    backbone_forward_cached,
    build_backbone,
)


@dataclass
class FusionConfig:
    swin: SwinConfig
    view_selection: str = "combined"
    view_dim: int = 32

    def validate(self) -> None:
        self.swin.validate()
        selection_views(self.view_selection)  # raises on unknown selection
        if self.view_dim < 1:
            raise ConfigError(f"view_dim must be >= 1, got {self.view_dim}")

    @property
    def active_views(self) -> tuple[str, ...]:
        return selection_views(self.view_selection)


@dataclass
class FusionModel:
    cfg: FusionConfig
    backbone: BackboneParams
    view_w: dict  # view -> Parameter (D, Dv)
    view_b: dict  # view -> Parameter (Dv,)
    final_w: Parameter  # (k*Dv, 1)
    final_b: Parameter  # (1,)

    def parameters(self) -> list[Parameter]:
        out = list(self.backbone.parameters())
        for view in self.cfg.active_views:
            out += [self.view_w[view], self.view_b[view]]
        out += [self.final_w, self.final_b]
        return out


def build_fusion_model(cfg: FusionConfig, seed: int = 0,
                       dtype=np.float32) -> FusionModel:
    cfg.validate()
    backbone = build_backbone(cfg.swin, seed=seed, dtype=dtype)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(23,)))
    d = cfg.swin.feature_dim
    dv = cfg.view_dim
    view_w, view_b = {}, {}
    for view in cfg.active_views:
        view_w[view] = Parameter(f"view.{view}.w", trunc_normal(rng, (d, dv), dtype=dtype))
        view_b[view] = Parameter(f"view.{view}.b", np.zeros(dv, dtype=dtype))
    k = len(cfg.active_views)
    final_w = Parameter("final.w", trunc_normal(rng, (k * dv, 1), dtype=dtype))
    final_b = Parameter("final.b", np.zeros(1, dtype=dtype))
    model = FusionModel(cfg, backbone, view_w, view_b, final_w, final_b)
    names = [p.name for p in model.parameters()]
    if len(names) != len(set(names)):
        raise ConfigError("duplicate parameter names in fusion model")
    return model


def clip_feature(frames, model: FusionModel) -> np.ndarray:
    """(T, S, S, ch) -> (D,): backbone per frame, arithmetic mean over T."""
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise DimensionError(f"clip_feature expects (T, S, S, ch), got {frames.shape}")
    if frames.shape[0] == 0:
        raise EmptyClipError("clip_feature: empty frame stack")
    feats, _ = backbone_forward_cached(frames, model.backbone)
    return feats.mean(axis=0)


def _stack_views(sample: VideoSample, model: FusionModel) -> np.ndarray:
    views = model.cfg.active_views
    stacks = []
    for view in views:
        if view not in sample.views:
            raise InputError(f"sample missing required view {view!r}")
        stacks.append(np.asarray(sample.views[view]))
    return np.stack(stacks)  # (k, T, S, S, ch)


def predict(sample: VideoSample, model: FusionModel) -> float:
    """Scalar velocity for one sample; pure function of (sample, params)."""
    arr = _stack_views(sample, model)[None]  # (1, k, T, S, S, ch)
    preds, _ = forward_batch(arr, model, need_cache=False)
    return float(preds[0])


def forward_batch(views_arr, model: FusionModel, need_cache: bool = True):
    """views_arr (n, k, T, S, S, ch) -> predictions (n,).

    Views follow the model's active-view order. Frames from all samples and
    views run through the shared backbone as one batch.
    """
    views_arr = np.asarray(views_arr)
    if views_arr.ndim != 6:
        raise DimensionError(
            f"forward_batch expects (n, k, T, S, S, ch), got {views_arr.shape}"
        )
    n, k, t = views_arr.shape[:3]
    active = model.cfg.active_views
    if k != len(active):
        raise InputError(f"got {k} view streams, model needs {len(active)}")
    if t == 0:
        raise EmptyClipError("forward_batch: empty frame stacks")
    flat = views_arr.reshape(n * k * t, *views_arr.shape[3:])
    feats, bb_cache = backbone_forward_cached(flat, model.backbone)
    d = feats.shape[-1]
    clip_feats = feats.reshape(n, k, t, d).mean(axis=2)  # (n, k, D)
    head_caches = []
    head_outs = []
    for i, view in enumerate(active):
        h, c = linear(clip_feats[:, i], model.view_w[view], model.view_b[view])
        head_outs.append(h)
        head_caches.append(c)
    concat = np.concatenate(head_outs, axis=-1)  # (n, k*Dv)
    out, final_cache = linear(concat, model.final_w, model.final_b)
    preds = out[:, 0]
    if not need_cache:
        return preds, None
    cache = (bb_cache, head_caches, final_cache, (n, k, t, d))
    return preds, cache


def backward_batch(grad_preds, cache, model: FusionModel) -> np.ndarray:
    """Accumulate parameter gradients for a forward_batch pass; returns the
    gradient w.r.t. the (n, k, T, S, S, ch) input stack."""
    bb_cache, head_caches, final_cache, (n, k, t, d) = cache
    dv = model.cfg.view_dim
    dout = np.asarray(grad_preds).reshape(n, 1)
    dconcat = linear_backward(dout, final_cache)
    dclip = np.empty((n, k, d), dtype=dconcat.dtype)
    for i, view in enumerate(model.cfg.active_views):
        dhead = dconcat[:, i * dv:(i + 1) * dv]
        dclip[:, i] = linear_backward(dhead, head_caches[i])
    dfeats = np.broadcast_to(dclip[:, :, None, :] / t, (n, k, t, d))
    dframes = backbone_backward(
        np.ascontiguousarray(dfeats.reshape(n * k * t, d)), bb_cache,
        model.backbone,
    )
    return dframes.reshape(n, k, t, *dframes.shape[1:])


# ---------------------------------------------------------------------------
# serialization (SWCK named-tensor table with reserved prefixes)
# ---------------------------------------------------------------------------

_VIEW_CODE = {"left": 0.0, "right": 1.0, "center": 2.0, "combined": 3.0}
_CODE_VIEW = {v: k for k, v in _VIEW_CODE.items()}


def _meta_tensors(cfg: FusionConfig) -> dict:
    s = cfg.swin
    scalar = lambda x: np.array([x], dtype=np.float64)
    return {
        "meta.image_size": scalar(s.image_size),
        "meta.patch_size": scalar(s.patch_size),
        "meta.embed_dim": scalar(s.embed_dim),
        "meta.num_blocks": scalar(s.num_blocks),
        "meta.heads": scalar(s.heads),
        "meta.window": scalar(s.window),
        "meta.mlp_ratio": scalar(s.mlp_ratio),
        "meta.merge_after_block": np.array(
            [1.0 if m else 0.0 for m in s.merge_after_block], dtype=np.float64
        ),
        "meta.use_rel_pos_bias": scalar(1.0 if s.use_rel_pos_bias else 0.0),
        "meta.channels": scalar(s.channels),
        "meta.ln_eps": scalar(s.ln_eps),
        "meta.view_selection": scalar(_VIEW_CODE[cfg.view_selection]),
        "meta.view_dim": scalar(cfg.view_dim),
    }


def save_fusion_model(path, model: FusionModel) -> None:
    tensors = dict(_meta_tensors(model.cfg))
    for p in model.parameters():
        tensors[p.name] = p.value
    vten.write_checkpoint(path, tensors)


def load_fusion_model(path) -> FusionModel:
    tensors = vten.read_checkpoint(path)

    def scalar(name):
        return float(tensors[name][0])

    swin_cfg = SwinConfig(
        image_size=int(scalar("meta.image_size")),
        patch_size=int(scalar("meta.patch_size")),
        embed_dim=int(scalar("meta.embed_dim")),
        num_blocks=int(scalar("meta.num_blocks")),
        heads=int(scalar("meta.heads")),
        window=int(scalar("meta.window")),
        mlp_ratio=scalar("meta.mlp_ratio"),
        merge_after_block=tuple(
            bool(v) for v in tensors["meta.merge_after_block"]
        ),
        use_rel_pos_bias=bool(scalar("meta.use_rel_pos_bias")),
        channels=int(scalar("meta.channels")),
        ln_eps=scalar("meta.ln_eps"),
    )
    cfg = FusionConfig(
        swin=swin_cfg,
        view_selection=_CODE_VIEW[scalar("meta.view_selection")],
        view_dim=int(scalar("meta.view_dim")),
    )
    dtype = tensors["final.w"].dtype
    model = build_fusion_model(cfg, seed=0, dtype=dtype)
    for p in model.parameters():
        if p.name not in tensors:
            raise InputError(f"checkpoint missing tensor {p.name!r}")
        if tensors[p.name].shape != p.value.shape:
            raise DimensionError(
                f"checkpoint tensor {p.name!r} has shape {tensors[p.name].shape}, "
                f"expected {p.value.shape}"
            )
        p.value = tensors[p.name].astype(dtype)
        p.grad = np.zeros_like(p.value)
    return model
