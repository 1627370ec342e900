"""Dense-tensor numerics: hand-written forward/backward pairs, Adam, L1 loss,
and a central finite-difference gradient checker.

Tensors are plain numpy arrays. Every forward returns ``(out, cache)``; the
matching backward consumes ``(grad_out, cache)``, accumulates parameter
gradients in place, and returns the gradient w.r.t. the input. There is no
tape: the model graph is small and fixed, so composites wire their own
backward chains. Training runs at float32; gradient checking requires
float64 (finite differences are unreliable at 32-bit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

DTYPE_TRAIN = np.float32
DTYPE_CHECK = np.float64

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_B = 0.044715


def ensure_finite(arr, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what}: non-finite values encountered")


@dataclass
class Parameter:
    """Named trainable tensor; ``grad`` always mirrors ``value``'s shape."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"parameter {self.name}: grad shape {self.grad.shape} "
                f"!= value shape {self.value.shape}"
            )

    def zero_grad(self) -> None:
        self.grad[...] = 0


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


_ONES_CACHE: dict = {}


def _ones_vec(n: int, dtype, scale: float = 1.0) -> np.ndarray:
    """Cached read-only constant vector; row sums/means as GEMV beat
    numpy's strided reductions on these shapes."""
    key = (n, np.dtype(dtype).str, scale)
    v = _ONES_CACHE.get(key)
    if v is None:
        v = np.full(n, scale, dtype=dtype)
        v.setflags(write=False)
        _ONES_CACHE[key] = v
    return v


def linear(x, w: Parameter, b: Parameter):
    """x (..., Din), w (Din, Dout), b (Dout) -> out (..., Dout).

    Leading axes are collapsed into a single 2D GEMM.
    """
    if x.shape[-1] != w.value.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.shape} incompatible with weight "
            f"shape {w.value.shape}"
        )
    x2 = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    out = x2 @ w.value
    out += b.value
    return out.reshape(*x.shape[:-1], w.value.shape[1]), (x2, x.shape, w, b)


def linear_backward(grad_out, cache):
    x2, x_shape, w, b = cache
    g2 = np.ascontiguousarray(grad_out).reshape(-1, grad_out.shape[-1])
    w.grad += x2.T @ g2
    b.grad += _ones_vec(g2.shape[0], g2.dtype) @ g2
    return (g2 @ w.value.T).reshape(x_shape)


def layer_norm(x, gamma: Parameter, beta: Parameter, eps: float = 1e-5):
    """Per-vector normalization over the last axis (population variance),
    then affine. x (..., C), gamma/beta (C,)."""
    c = gamma.value.shape[0]
    if x.shape[-1] != c:
        raise DimensionError(f"layer_norm: last axis {x.shape[-1]} != C={c}")
    x2 = np.ascontiguousarray(x).reshape(-1, c)
    wm = _ones_vec(c, x2.dtype, 1.0 / c)
    mu = x2 @ wm
    xhat = x2 - mu[:, None]
    var = (xhat * xhat) @ wm
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv[:, None]
    out = xhat * gamma.value
    out += beta.value
    return out.reshape(x.shape), (xhat, inv, gamma, beta, x.shape)


def layer_norm_backward(grad_out, cache):
    xhat, inv, gamma, beta, x_shape = cache
    c = xhat.shape[-1]
    g2 = np.ascontiguousarray(grad_out).reshape(-1, c)
    ones_r = _ones_vec(g2.shape[0], g2.dtype)
    beta.grad += ones_r @ g2
    gx = g2 * xhat
    gamma.grad += ones_r @ gx
    dx = g2 * gamma.value
    wm = _ones_vec(c, g2.dtype, 1.0 / c)
    m1 = dx @ wm
    gx *= gamma.value          # now dxhat * xhat
    m2 = gx @ wm
    dx -= m1[:, None]
    dx -= xhat * m2[:, None]
    dx *= inv[:, None]
    return dx.reshape(x_shape)


def softmax(x):
    """Stable last-axis softmax; returns (probs, probs)."""
    p = x - x.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    k = p.shape[-1]
    s = p.reshape(-1, k) @ _ones_vec(k, p.dtype)
    p /= s.reshape(*p.shape[:-1], 1)
    return p, p


def softmax_backward(grad_out, probs):
    k = probs.shape[-1]
    gp = grad_out * probs
    inner = gp.reshape(-1, k) @ _ones_vec(k, gp.dtype)
    gp -= probs * inner.reshape(*probs.shape[:-1], 1)
    return gp


def gelu(x):
    """tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x2 = x * x
    u = x2 * _GELU_B
    u += 1.0
    u *= x
    u *= _GELU_C
    t = np.tanh(u)
    out = 1.0 + t
    out *= x
    out *= 0.5
    return out, (x, x2, t)


def gelu_backward(grad_out, cache):
    x, x2, t = cache
    du = x2 * (3.0 * _GELU_B)
    du += 1.0
    du *= _GELU_C
    local = 1.0 - t * t
    local *= du
    local *= x
    local += 1.0 + t
    local *= 0.5
    local *= grad_out
    return local


def l1_loss(pred, target):
    """Mean absolute difference and its subgradient w.r.t. pred.

    pred, target (N,) -> (scalar, (N,)). Subgradient at exact ties is 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"l1_loss: pred shape {pred.shape} != target shape {target.shape}"
        )
    if pred.size == 0:
        raise DimensionError("l1_loss: empty input")
    d = pred - target
    loss = float(np.mean(np.abs(d)))
    sub = np.sign(d) / d.size
    return loss, sub


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float
    beta2: float
    eps_hat: float


def adam_init(p: Parameter, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps_hat: float = 1e-8) -> AdamState:
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ConfigError(f"adam: betas must lie in (0,1), got {beta1}, {beta2}")
    return AdamState(
        step=0,
        m=np.zeros_like(p.value),
        v=np.zeros_like(p.value),
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps_hat=eps_hat,
    )


def adam_step(p: Parameter, s: AdamState) -> None:
    """Standard bias-corrected Adam update, in place."""
    if s.m.shape != p.value.shape:
        raise DimensionError(
            f"adam: state shape {s.m.shape} != parameter shape {p.value.shape}"
        )
    g = p.grad
    s.step += 1
    s.m *= s.beta1
    s.m += (1.0 - s.beta1) * g
    s.v *= s.beta2
    s.v += (1.0 - s.beta2) * (g * g)
    mhat = s.m / (1.0 - s.beta1 ** s.step)
    vhat = s.v / (1.0 - s.beta2 ** s.step)
    p.value -= s.lr * mhat / (np.sqrt(vhat) + s.eps_hat)


class Adam:
    """Optimizer over a fixed parameter list; update order is deterministic."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps_hat: float = 1e-8):
        self.params = list(params)
        self.states = [adam_init(p, lr, beta1, beta2, eps_hat) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            adam_step(p, s)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class CheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class CheckReport:
    fragment: str
    tolerance: float
    entries: list[CheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def worst(self) -> CheckEntry:
        return max(self.entries, key=lambda e: e.max_rel_err)


def _rel_err(analytic: float, numeric: float, atol: float = 1e-9) -> float:
    diff = abs(analytic - numeric)
    if diff <= atol:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def grad_check(fragment, x, tolerance: float, *, h: float = 1e-5,
               max_elems_per_param: int = 24, max_input_elems: int = 128,
               seed: int = 0) -> CheckReport:
    """Compare a fragment's analytic gradients against central finite
    differences at step ``h``.

    ``fragment`` exposes ``name``, ``parameters()``,
    ``forward(x) -> (out, cache)`` and ``backward(grad_out, cache) -> grad_x``.
    The scalar objective is a fixed random projection of the output. Every
    parameter tensor is checked on up to ``max_elems_per_param`` deterministic
    sampled elements (all of them when the tensor is small); the input
    likewise up to ``max_input_elems``. Requires float64 throughout.
    """
    x = np.asarray(x)
    if x.dtype != np.float64:
        raise ConfigError("grad_check requires float64 input")
    params = fragment.parameters()
    for p in params:
        if p.value.dtype != np.float64:
            raise ConfigError(
                f"grad_check requires float64 parameters; {p.name} is {p.value.dtype}"
            )

    rng = np.random.default_rng(seed)
    out, cache = fragment.forward(x)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"fragment '{fragment.name}': non-finite forward output")
    proj = rng.standard_normal(out.shape)

    for p in params:
        p.zero_grad()
    grad_x = fragment.backward(proj.copy(), cache)
    analytic = {p.name: p.grad.copy() for p in params}

    def objective() -> float:
        o, _ = fragment.forward(x)
        if not np.all(np.isfinite(o)):
            raise NumericError(
                f"fragment '{fragment.name}': non-finite output during FD probe"
            )
        return float(np.vdot(proj, o))

    def fd_at(values: np.ndarray, flat_idx: int) -> float:
        orig = values.flat[flat_idx]
        values.flat[flat_idx] = orig + h
        fp = objective()
        values.flat[flat_idx] = orig - h
        fm = objective()
        values.flat[flat_idx] = orig
        return (fp - fm) / (2.0 * h)

    def sample_idx(size: int, cap: int) -> np.ndarray:
        if size <= cap:
            return np.arange(size)
        return rng.choice(size, size=cap, replace=False)

    report = CheckReport(fragment=fragment.name, tolerance=tolerance)

    idx = sample_idx(x.size, max_input_elems)
    worst = 0.0
    for i in idx:
        worst = max(worst, _rel_err(grad_x.flat[i], fd_at(x, int(i))))
    report.entries.append(CheckEntry("input", worst, len(idx)))

    for p in params:
        idx = sample_idx(p.value.size, max_elems_per_param)
        worst = 0.0
        for i in idx:
            worst = max(worst, _rel_err(analytic[p.name].flat[i], fd_at(p.value, int(i))))
        report.entries.append(CheckEntry(p.name, worst, len(idx)))

    return report


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=DTYPE_TRAIN) -> np.ndarray:
    """Normal(0, std) resampled until within 2 std; used for weight init."""
    out = rng.normal(0.0, std, size=shape)
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out.astype(dtype)
