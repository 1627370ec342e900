"""Baselines: frozen residual conv-net frame features feeding either an RBF
epsilon-SVR solved from the dual, or a trainable dense regression head.

The SVR dual
    max_beta  -1/2 beta' K beta - eps * sum|beta_i| + sum y_i beta_i
    s.t.      sum beta_i = 0,   |beta_i| <= C
is solved by pairwise coordinate ascent: pick the maximal KKT-violating pair,
solve the 1-D subproblem exactly (piecewise quadratic with kinks where a
beta crosses zero), repeat. Dependency-free and verifiable against a
brute-force grid oracle on tiny instances.

SvrModel file ("SVRM"), little-endian:
    magic | u32 version=1 | f64 C, epsilon, tol, gamma, coef0 | u32 degree |
    .vten support vectors (n, F) f64 | .vten coefficients (n,) f64 | f64 bias
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import vten
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    FormatError,
    InputError,
    NumericError,
)
from .numerics import Adam, Parameter, l1_loss

MAX_PAIR_UPDATES = 10_000


@dataclass
class SvrConfig:
    kernel: str = "rbf"
    degree: int = 3        # stored for config fidelity; inert for RBF
    coef0: float = 0.0     # likewise inert for RBF
    tol: float = 1e-4
    C: float = 1.0
    epsilon: float = 0.01
    gamma: float | str = "scale"

    def validate(self) -> None:
        if self.kernel != "rbf":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")
        if self.C <= 0 or self.epsilon < 0 or self.tol <= 0:
            raise ConfigError("require C > 0, epsilon >= 0, tol > 0")
        if not (self.gamma == "scale" or
                (isinstance(self.gamma, (int, float)) and self.gamma > 0)):
            raise ConfigError(f"gamma must be positive or 'scale', got {self.gamma!r}")


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # (n_sv, F)
    coef: np.ndarray             # (n_sv,) dual coefficients beta = alpha - alpha*
    bias: float
    gamma: float


def resolve_gamma(cfg: SvrConfig, x: np.ndarray) -> float:
    if cfg.gamma != "scale":
        return float(cfg.gamma)
    var = float(np.var(x))
    if var <= 0.0:
        return 1.0
    return 1.0 / (x.shape[1] * var)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """k(u, v) = exp(-gamma * ||u - v||^2), rows of a against rows of b."""
    a2 = np.sum(a * a, axis=1)[:, None]
    b2 = np.sum(b * b, axis=1)[None, :]
    d2 = np.maximum(a2 + b2 - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


def _pair_step(beta_i, beta_j, gi, gj, eta, eps, c):
    """Best feasible t for the move (beta_i + t, beta_j - t).

    Returns (t, gain). The 1-D objective change
        t*(gi - gj) - eta*t^2/2 - eps*(|beta_i + t| - |beta_i|)
                                - eps*(|beta_j - t| - |beta_j|)
    is concave piecewise quadratic with kinks at t = -beta_i and t = beta_j.
    """
    lo = max(-c - beta_i, beta_j - c)
    hi = min(c - beta_i, beta_j + c)
    if hi <= lo:
        return 0.0, 0.0

    def gain(t):
        return (t * (gi - gj) - 0.5 * eta * t * t
                - eps * (abs(beta_i + t) - abs(beta_i))
                - eps * (abs(beta_j - t) - abs(beta_j)))

    points = sorted({lo, hi, min(max(-beta_i, lo), hi), min(max(beta_j, lo), hi)})
    candidates = list(points)
    for a, b in zip(points[:-1], points[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        si = 1.0 if beta_i + mid >= 0 else -1.0
        sj = 1.0 if beta_j - mid >= 0 else -1.0
        if eta > 0.0:
            t_star = (gi - gj - eps * (si - sj)) / eta
            if a < t_star < b:
                candidates.append(t_star)
    best_t, best_gain = 0.0, 0.0
    for t in candidates:
        g = gain(t)
        if g > best_gain:
            best_t, best_gain = t, g
    return best_t, best_gain


def _kkt_bounds(beta, g, eps, c):
    """(up, down) marginal-gain vectors for increasing / decreasing each beta.

    Infeasible directions are masked to -inf / +inf; KKT holds when
    max(up) <= min(down).
    """
    up = np.where(beta >= 0, g - eps, g + eps)
    down = np.where(beta <= 0, g + eps, g - eps)
    up[beta >= c] = -np.inf
    down[beta <= -c] = np.inf
    return up, down


def dual_objective(k: np.ndarray, y: np.ndarray, beta: np.ndarray,
                   eps: float) -> float:
    return float(-0.5 * beta @ k @ beta - eps * np.sum(np.abs(beta)) + y @ beta)


def svr_fit(x: np.ndarray, y: np.ndarray, cfg: SvrConfig) -> SvrModel:
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"svr_fit: X {x.shape} inconsistent with y {y.shape}")
    if x.shape[0] < 1:
        raise InputError("svr_fit: need at least one training point")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("svr_fit: non-finite features or targets")

    gamma = resolve_gamma(cfg, x)
    n = x.shape[0]
    k = rbf_kernel(x, x, gamma)
    beta = np.zeros(n)
    q = np.zeros(n)  # K @ beta, maintained incrementally
    c, eps = cfg.C, cfg.epsilon
    # Converge far below cfg.tol so the dual objective is essentially exact;
    # cfg.tol remains the contract checked on exit.
    stop_tol = max(cfg.tol * 1e-8, 1e-13)

    for _ in range(MAX_PAIR_UPDATES):
        g = y - q
        up, down = _kkt_bounds(beta, g, eps, c)
        i = int(np.argmax(up))
        j = int(np.argmin(down))
        if up[i] - down[j] <= stop_tol:
            break
        eta = k[i, i] + k[j, j] - 2.0 * k[i, j]
        t, gain = _pair_step(beta[i], beta[j], g[i], g[j], eta, eps, c)
        if gain <= 0.0:
            break  # no representable progress left
        beta[i] += t
        beta[j] -= t
        q += t * (k[:, i] - k[:, j])

    g = y - q
    up, down = _kkt_bounds(beta, g, eps, c)
    violation = float(np.max(up) - np.min(down))
    if violation > cfg.tol:
        raise ConvergenceError(
            f"svr_fit: no convergence within {MAX_PAIR_UPDATES} pair updates",
            kkt_violation=violation,
        )
    free = (np.abs(beta) > 1e-10) & (np.abs(beta) < c - 1e-10)
    if np.any(free):
        bias = float(np.mean(g[free] - eps * np.sign(beta[free])))
    else:
        # all beta at a bound or zero: midpoint of the feasible bias interval
        bias = float(0.5 * (np.max(up) + np.min(down)))

    sv = np.abs(beta) > 1e-10
    return SvrModel(
        support_vectors=x[sv].copy(),
        coef=beta[sv].copy(),
        bias=bias,
        gamma=gamma,
    )


def svr_predict(model: SvrModel, x: np.ndarray):
    """Sum beta_i k(sv_i, x) + b for a single (F,) vector or (n, F) rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    f = model.support_vectors.shape[1] if model.support_vectors.size else rows.shape[1]
    if rows.ndim != 2 or rows.shape[1] != f:
        raise DimensionError(
            f"svr_predict: feature shape {x.shape} incompatible with F={f}"
        )
    if model.support_vectors.size == 0:
        out = np.full(rows.shape[0], model.bias)
    else:
        out = rbf_kernel(rows, model.support_vectors, model.gamma) @ model.coef \
            + model.bias
    return float(out[0]) if single else out


_SVRM_MAGIC = b"SVRM"
_SVRM_HEAD = struct.Struct("<4sI5dI")


def save_svr(path, model: SvrModel, cfg: SvrConfig) -> None:
    head = _SVRM_HEAD.pack(_SVRM_MAGIC, 1, cfg.C, cfg.epsilon, cfg.tol,
                           model.gamma, cfg.coef0, cfg.degree)
    body = (vten.dumps(model.support_vectors.astype(np.float64))
            + vten.dumps(model.coef.astype(np.float64))
            + struct.pack("<d", model.bias))
    with open(path, "wb") as fh:
        fh.write(head + body)


def load_svr(path) -> tuple[SvrModel, SvrConfig]:
    source = str(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _SVRM_MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}")
    magic, version, c, eps, tol, gamma, coef0, degree = _SVRM_HEAD.unpack_from(buf)
    if version != 1:
        raise FormatError(f"{source}: unsupported version {version}")
    offset = _SVRM_HEAD.size
    sv, offset = vten._loads_at(buf, offset, source)
    coef, offset = vten._loads_at(buf, offset, source)
    if offset + 8 != len(buf):
        raise FormatError(f"{source}: malformed trailer")
    (bias,) = struct.unpack_from("<d", buf, offset)
    cfg = SvrConfig(tol=tol, C=c, epsilon=eps, gamma=gamma, degree=degree,
                    coef0=coef0)
    return SvrModel(sv, coef, bias, gamma), cfg


# ---------------------------------------------------------------------------
# frozen residual conv-net features
# ---------------------------------------------------------------------------


@dataclass
class ConvFeatConfig:
    widths: tuple[int, ...] = (8, 16, 32)
    blocks_per_stage: int = 1
    feature_dim: int = 32
    image_size: int = 32
    channels: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.widths[-1] != self.feature_dim:
            raise ConfigError(
                f"last stage width {self.widths[-1]} must equal "
                f"feature_dim {self.feature_dim}"
            )
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")


def _he(rng, shape):
    fan_in = shape[0] * shape[1] * shape[2]
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def build_conv_weights(cfg: ConvFeatConfig) -> list[np.ndarray]:
    """Fixed seeded 3x3 kernels: stem, then per stage residual pairs and a
    stride-2 transition. Weights are immutable during baseline fitting."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(41,)))
    weights = [_he(rng, (3, 3, cfg.channels, cfg.widths[0]))]
    for i, width in enumerate(cfg.widths):
        for _ in range(cfg.blocks_per_stage):
            weights.append(_he(rng, (3, 3, width, width)))
            weights.append(_he(rng, (3, 3, width, width)))
        if i + 1 < len(cfg.widths):
            weights.append(_he(rng, (3, 3, width, cfg.widths[i + 1])))
    return weights


def _conv3x3(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """x (B, H, W, Cin), w (3, 3, Cin, Cout) -> (B, Ho, Wo, Cout), zero pad 1."""
    b, h, wd, ci = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (B, Ho, Wo, Cin, 3, 3)
    bo, ho, wo = win.shape[:3]
    cols = win.reshape(bo * ho * wo, ci * 9)
    kern = w.transpose(2, 0, 1, 3).reshape(ci * 9, -1)
    return (cols @ kern).reshape(bo, ho, wo, -1)


def conv_features(frames: np.ndarray, cfg: ConvFeatConfig,
                  weights: list[np.ndarray] | None = None) -> np.ndarray:
    """(T, S, S, ch) -> (F,): per-frame conv features, mean over frames."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[1] != cfg.image_size \
            or frames.shape[2] != cfg.image_size or frames.shape[3] != cfg.channels:
        raise DimensionError(
            f"conv_features: frames {frames.shape} do not match configured "
            f"{cfg.image_size}x{cfg.image_size}x{cfg.channels}"
        )
    if weights is None:
        weights = build_conv_weights(cfg)
    it = iter(weights)
    x = np.maximum(_conv3x3(frames, next(it)), 0.0)
    for i in range(len(cfg.widths)):
        for _ in range(cfg.blocks_per_stage):
            y = np.maximum(_conv3x3(x, next(it)), 0.0)
            y = _conv3x3(y, next(it))
            x = np.maximum(x + y, 0.0)
        if i + 1 < len(cfg.widths):
            x = np.maximum(_conv3x3(x, next(it), stride=2), 0.0)
    per_frame = x.mean(axis=(1, 2))  # (T, F)
    return per_frame.mean(axis=0).astype(np.float64)


# ---------------------------------------------------------------------------
# dense regression head on frozen features
# ---------------------------------------------------------------------------


@dataclass
class DenseHead:
    w: np.ndarray  # (F,)
    b: float
    losses: list[float] = field(default_factory=list)


def dense_head_fit(x: np.ndarray, y: np.ndarray, epochs: int,
                   lr: float) -> DenseHead:
    """Full-batch L1 + Adam on a zero-initialized affine head."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"dense_head_fit: X {x.shape} vs y {y.shape}")
    if x.shape[0] < 1:
        raise InputError("dense_head_fit: empty training set")
    w = Parameter("dense.w", np.zeros(x.shape[1]))
    b = Parameter("dense.b", np.zeros(1))
    opt = Adam([w, b], lr=lr)
    losses = []
    for epoch in range(epochs):
        pred = x @ w.value + b.value[0]
        loss, sub = l1_loss(pred, y)
        if not np.isfinite(loss):
            raise NumericError(f"dense_head_fit: loss diverged at epoch {epoch}")
        opt.zero_grad()
        w.grad += x.T @ sub
        b.grad += sub.sum()
        opt.step()
        losses.append(loss)
    return DenseHead(w=w.value.copy(), b=float(b.value[0]), losses=losses)


def dense_head_predict(head: DenseHead, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != head.w.shape[0]:
        raise DimensionError(
            f"dense_head_predict: {x.shape[-1]} features, head has {head.w.shape[0]}"
        )
    return x @ head.w + head.b
