"""Training loop, metrics, participant-disjoint cross-validation, ablation
over view selections, baseline cross-validation, and report writers.

Report files (UTF-8, tab-separated, 6-decimal fixed point):
    metrics.tsv          one row per metric: per-fold values, mean, sample std
    scatter_fold{k}.tsv  actual / predicted pairs for fold k's test split
    hist_fold{k}.tsv     label histogram of fold k's test split
    ablation.tsv         one row per view selection (plus reference comments)
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, datasets, fusion
from ._runtime import tune_process
from .errors import (
    ConfigError,
    InputError,
    NumericError,
    UndefinedCorrelationError,
)
from .numerics import Adam, l1_loss
from .swin import SwinConfig

# Published full-scale results on the original (private) athlete dataset.
# Not reproducible here; kept as documented reference rows for the ablation
# report. Format: label -> (mae_mean, mae_std, r_mean, r_std).
REFERENCE_FULL_SCALE = {
    "baseline_svm": (0.19, 0.017, 0.12, 0.06),
    "baseline_dense": (0.28, 0.017, 0.16, 0.05),
    "left": (0.16, 0.016, 0.35, 0.06),
    "right": (0.20, 0.014, 0.34, 0.04),
    "center": (0.19, 0.014, 0.56, 0.06),
    "combined": (0.21, 0.015, 0.71, 0.06),
}


def mae(pred, target) -> float:
    """Mean absolute difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise InputError(f"mae: shapes {pred.shape} and {target.shape} differ")
    if pred.size < 1:
        raise InputError("mae: need at least one pair")
    return float(np.mean(np.abs(pred - target)))


def pearson_r(x, y) -> float:
    """Sample linear correlation; raises for constant inputs rather than
    silently returning 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"pearson_r: shapes {x.shape} and {y.shape} differ")
    if x.size < 2:
        raise InputError("pearson_r: need at least two pairs")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise UndefinedCorrelationError(
            "pearson_r undefined: at least one input is constant"
        )
    return float(xc @ yc) / denom


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch: int = 8
    view: str = "combined"
    seed: int = 0
    loss: str = "l1"
    bins: int = 10
    view_dim: int = 32
    swin: SwinConfig = field(default_factory=SwinConfig)

    def validate(self) -> None:
        if self.epochs < 1 or self.lr <= 0 or self.batch < 1:
            raise ConfigError("require epochs >= 1, lr > 0, batch >= 1")
        if self.loss != "l1":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        datasets.selection_views(self.view)
        self.swin.validate()

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:8]

    def fusion_config(self) -> fusion.FusionConfig:
        return fusion.FusionConfig(swin=self.swin, view_selection=self.view,
                                   view_dim=self.view_dim)


def _derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(entropy=tuple(keys))
               .generate_state(1, np.uint64)[0])


class FrameCache:
    """In-memory store of stacked view arrays keyed by (sample id, selection)."""

    def __init__(self, index: datasets.DatasetIndex):
        self.index = index
        self._store: dict = {}

    def get(self, sample_id: int, selection: str) -> np.ndarray:
        key = (sample_id, selection)
        if key not in self._store:
            sample = datasets.load_sample(self.index, sample_id, selection)
            stack = np.stack([sample.views[v]
                              for v in datasets.selection_views(selection)])
            self._store[key] = stack.astype(np.float32)  # (k, T, S, S, ch)
        return self._store[key]

    def preload(self, ids, selection: str) -> None:
        for i in ids:
            self.get(i, selection)


def train(model: fusion.FusionModel, index: datasets.DatasetIndex,
          train_ids, cfg: TrainConfig, *, sampler_seed: int | None = None,
          cache: FrameCache | None = None) -> list[float]:
    """Balanced-batch L1/Adam training; returns the per-epoch mean loss trace.

    Deterministic given (model init, cfg, sampler_seed); one epoch is
    ceil(len(train_ids) / batch) with-replacement batches.
    """
    tune_process()
    cfg.validate()
    train_ids = list(train_ids)
    if not train_ids:
        raise InputError("train: empty training split")
    cache = cache or FrameCache(index)
    if sampler_seed is None:
        sampler_seed = _derived_seed(cfg.seed, 2)
    labels = index.labels(train_ids)
    steps_per_epoch = math.ceil(len(train_ids) / cfg.batch)
    sampler = datasets.balanced_batches(
        train_ids, labels,
        datasets.SamplerConfig(bins=cfg.bins, batch=cfg.batch, seed=sampler_seed),
        steps=steps_per_epoch * cfg.epochs,
    )
    opt = Adam(model.parameters(), lr=cfg.lr)
    velocities = index.labels()
    trace = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps_per_epoch):
            batch = next(sampler)
            arr = np.stack([cache.get(i, cfg.view) for i in batch])
            targets = velocities[batch].astype(np.float32)
            preds, fwd_cache = fusion.forward_batch(arr, model)
            loss, sub = l1_loss(preds, targets)
            if not np.isfinite(loss):
                raise NumericError(f"train: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            fusion.backward_batch(sub, fwd_cache, model)
            opt.step()
            total += loss
        trace.append(total / steps_per_epoch)
    return trace


@dataclass
class EvalResult:
    mae: float
    r: float | None
    r_error: str | None
    pairs: np.ndarray  # (n, 2) columns (actual, predicted)


def evaluate(model: fusion.FusionModel, index: datasets.DatasetIndex,
             test_ids, *, cache: FrameCache | None = None,
             chunk: int = 16) -> EvalResult:
    """Metrics plus (actual, predicted) scatter pairs over a test split."""
    test_ids = sorted(test_ids)
    if not test_ids:
        raise InputError("evaluate: empty test split")
    cache = cache or FrameCache(index)
    selection = model.cfg.view_selection
    preds = []
    for lo in range(0, len(test_ids), chunk):
        ids = test_ids[lo:lo + chunk]
        arr = np.stack([cache.get(i, selection) for i in ids])
        p, _ = fusion.forward_batch(arr, model, need_cache=False)
        preds.append(p.astype(np.float64))
    predicted = np.concatenate(preds)
    actual = index.labels(test_ids)
    pairs = np.stack([actual, predicted], axis=1)
    err = mae(predicted, actual)
    r_val, r_err = None, None
    if len(test_ids) >= 2:
        try:
            r_val = pearson_r(actual, predicted)
        except UndefinedCorrelationError as exc:
            r_err = str(exc)
    else:
        r_err = "single-sample split: correlation undefined"
    return EvalResult(mae=err, r=r_val, r_error=r_err, pairs=pairs)


@dataclass
class MetricsReport:
    view: str
    seed: int
    config_hash: str
    fold_mae: tuple[float, ...]
    fold_r: tuple[float, ...]
    method: str = "fusion"

    def __post_init__(self):
        if any(m < 0 or not math.isfinite(m) for m in self.fold_mae):
            raise ConfigError(f"invalid fold MAE values {self.fold_mae}")
        if any(not -1.0 <= r <= 1.0 for r in self.fold_r):
            raise ConfigError(f"fold R values outside [-1, 1]: {self.fold_r}")

    @property
    def mae_mean(self) -> float:
        return float(np.mean(self.fold_mae))

    @property
    def mae_std(self) -> float:
        return float(np.std(self.fold_mae, ddof=1))

    @property
    def r_mean(self) -> float:
        return float(np.mean(self.fold_r))

    @property
    def r_std(self) -> float:
        return float(np.std(self.fold_r, ddof=1))


def _fold_run(index, split, fold, cfg, cache):
    train_pids, test_pids = split.train_test(fold)
    assert not train_pids & test_pids, "participant leaked across the fold split"
    train_ids = index.ids_for_participants(train_pids)
    test_ids = index.ids_for_participants(test_pids)
    model = fusion.build_fusion_model(
        cfg.fusion_config(),
        seed=_derived_seed(cfg.seed, fold, _view_code(cfg.view), 1),
    )
    train(model, index, train_ids, cfg,
          sampler_seed=_derived_seed(cfg.seed, fold, _view_code(cfg.view), 2),
          cache=cache)
    return evaluate(model, index, test_ids, cache=cache)


def _view_code(view: str) -> int:
    return datasets.VIEW_SELECTIONS.index(view)


def cross_validate(index: datasets.DatasetIndex, cfg: TrainConfig,
                   threads: int = 1) -> tuple[MetricsReport, list[EvalResult]]:
    """Train on two folds, evaluate on the third, for each of the 3 folds."""
    cfg.validate()
    split = datasets.split_folds(index.participants(), k=3, seed=cfg.seed)
    cache = FrameCache(index)
    cache.preload(range(len(index)), cfg.view)
    folds = range(len(split.folds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda k: _fold_run(index, split, k, cfg, cache), folds))
    else:
        results = [_fold_run(index, split, k, cfg, cache) for k in folds]
    for k, res in enumerate(results):
        if res.r is None:
            raise UndefinedCorrelationError(
                f"fold {k}: {res.r_error} (MAE was {res.mae:.6f})"
            )
    report = MetricsReport(
        view=cfg.view,
        seed=cfg.seed,
        config_hash=cfg.hash(),
        fold_mae=tuple(r.mae for r in results),
        fold_r=tuple(r.r for r in results),
    )
    return report, results


def ablate(index: datasets.DatasetIndex, cfg: TrainConfig,
           threads: int = 1) -> dict[str, tuple[MetricsReport, list[EvalResult]]]:
    """Cross-validate each view selection: left, right, center, combined."""
    out = {}
    for view in datasets.VIEW_SELECTIONS:
        view_cfg = TrainConfig(**{**asdict(cfg), "view": view,
                                  "swin": cfg.swin})
        out[view] = cross_validate(index, view_cfg, threads=threads)
    return out


# ---------------------------------------------------------------------------
# baselines over frozen conv features
# ---------------------------------------------------------------------------


def baseline_features(index: datasets.DatasetIndex, view: str,
                      conv_cfg: baselines.ConvFeatConfig | None = None
                      ) -> np.ndarray:
    """(n, k*F) matrix: frozen conv features per view, concatenated in the
    canonical view order for the combined selection."""
    conv_cfg = conv_cfg or baselines.ConvFeatConfig()
    weights = baselines.build_conv_weights(conv_cfg)
    rows = []
    for i in range(len(index)):
        sample = datasets.load_sample(index, i, view)
        feats = [baselines.conv_features(sample.views[v], conv_cfg, weights)
                 for v in datasets.selection_views(view)]
        rows.append(np.concatenate(feats))
    return np.stack(rows)


def baseline_cross_validate(index: datasets.DatasetIndex, method: str,
                            view: str, seed: int = 0,
                            conv_cfg: baselines.ConvFeatConfig | None = None,
                            svr_cfg: baselines.SvrConfig | None = None,
                            dense_epochs: int = 2000,
                            dense_lr: float = 3e-3) -> MetricsReport:
    if method not in ("svr", "dense"):
        raise ConfigError(f"unknown baseline method {method!r}")
    features = baseline_features(index, view, conv_cfg)
    labels = index.labels()
    split = datasets.split_folds(index.participants(), k=3, seed=seed)
    fold_mae, fold_r = [], []
    for k in range(len(split.folds)):
        train_pids, test_pids = split.train_test(k)
        tr = index.ids_for_participants(train_pids)
        te = index.ids_for_participants(test_pids)
        if method == "svr":
            model = baselines.svr_fit(features[tr], labels[tr],
                                      svr_cfg or baselines.SvrConfig())
            pred = baselines.svr_predict(model, features[te])
        else:
            head = baselines.dense_head_fit(features[tr], labels[tr],
                                            epochs=dense_epochs, lr=dense_lr)
            pred = baselines.dense_head_predict(head, features[te])
        fold_mae.append(mae(pred, labels[te]))
        fold_r.append(pearson_r(labels[te], pred))
    return MetricsReport(view=view, seed=seed, config_hash="baseline",
                         fold_mae=tuple(fold_mae), fold_r=tuple(fold_r),
                         method=method)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def emit_reports(report: MetricsReport, evals: list[EvalResult],
                 out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_tsv(report, out_dir / "metrics.tsv")
    all_actual = np.concatenate([e.pairs[:, 0] for e in evals])
    edges = np.linspace(all_actual.min(), all_actual.max(), 11)
    for k, res in enumerate(evals):
        lines = ["actual\tpredicted"]
        lines += [f"{a:.6f}\t{p:.6f}" for a, p in res.pairs]
        (out_dir / f"scatter_fold{k}.tsv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")
        counts, _ = np.histogram(res.pairs[:, 0], bins=edges)
        lines = ["bin_low\tbin_high\tcount"]
        lines += [f"{edges[b]:.6f}\t{edges[b + 1]:.6f}\t{int(counts[b])}"
                  for b in range(len(counts))]
        (out_dir / f"hist_fold{k}.tsv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")


def write_metrics_tsv(report: MetricsReport, path) -> None:
    k = len(report.fold_mae)
    header = "metric\t" + "\t".join(f"fold{i}" for i in range(k)) + "\tmean\tstd"
    rows = [
        "# jumpvel metrics",
        f"# method={report.method} view={report.view} seed={report.seed} "
        f"config={report.config_hash} std=sample(n-1)",
        header,
        "mae\t" + "\t".join(f"{m:.6f}" for m in report.fold_mae)
        + f"\t{report.mae_mean:.6f}\t{report.mae_std:.6f}",
        "r\t" + "\t".join(f"{r:.6f}" for r in report.fold_r)
        + f"\t{report.r_mean:.6f}\t{report.r_std:.6f}",
    ]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_metrics_tsv(path) -> dict:
    """Parse a metrics.tsv back into {metric: {fold values, mean, std}}."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln and not ln.startswith("#")]
    cols = lines[0].split("\t")
    out = {}
    for row in lines[1:]:
        cells = row.split("\t")
        out[cells[0]] = dict(zip(cols[1:], map(float, cells[1:])))
    return out


def write_ablation_table(results: dict, path) -> None:
    """results: view -> (MetricsReport, evals). Reference rows are comments."""
    lines = [
        "# ablation over view selections (MAE lower is better, R higher is better)",
        "# reference rows below are from the original full-scale study on the",
        "# private athlete dataset; they are documentation, not reproducible here:",
    ]
    for label, (mm, ms, rm, rs) in REFERENCE_FULL_SCALE.items():
        lines.append(
            f"# reference_full_scale\t{label}\tmae {mm:.2f} +- {ms:.3f}"
            f"\tr {rm:.2f} +- {rs:.2f}"
        )
    lines.append("view\tmae_mean\tmae_std\tr_mean\tr_std")
    for view in datasets.VIEW_SELECTIONS:
        report, _ = results[view]
        lines.append(
            f"{view}\t{report.mae_mean:.6f}\t{report.mae_std:.6f}"
            f"\t{report.r_mean:.6f}\t{report.r_std:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
