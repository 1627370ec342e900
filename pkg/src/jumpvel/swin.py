"""Windowed-attention backbone: patch embedding, window partition/reverse,
cyclic shift with attention masking, W-MSA / SW-MSA layers composed into
blocks, patch merging, and the pooled feature head.

All spatial ops accept arbitrary leading batch axes; a token grid is the
trailing (H, W, C). Forward functions used in training return (out, cache)
with a hand-written backward, mirroring `numerics`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    Parameter,
    _ones_vec,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    softmax,
    softmax_backward,
    trunc_normal,
)

MASK_NEG = -1e9


@dataclass
class SwinConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 16
    num_blocks: int = 4
    heads: int = 2
    window: int = 2
    mlp_ratio: float = 2.0
    merge_after_block: tuple[bool, ...] = (True, True, False, False)
    use_rel_pos_bias: bool = True
    channels: int = 1
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size "
                f"{self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if len(self.merge_after_block) != self.num_blocks:
            raise ConfigError(
                f"merge_after_block has {len(self.merge_after_block)} entries "
                f"for {self.num_blocks} blocks"
            )
        side = self.image_size // self.patch_size
        for i, merge in enumerate(self.merge_after_block):
            if side % self.window != 0:
                raise ConfigError(
                    f"token grid side {side} at block {i} not divisible by "
                    f"window {self.window}"
                )
            if merge:
                if side % 2 != 0 or side // 2 < self.window:
                    raise ConfigError(
                        f"cannot merge after block {i}: side {side} would drop "
                        f"below window {self.window}"
                    )
                side //= 2

    @property
    def shift(self) -> int:
        return self.window // 2

    def stage_dims(self) -> list[tuple[int, int]]:
        """(grid side, channels) entering each block."""
        side = self.image_size // self.patch_size
        dim = self.embed_dim
        out = []
        for merge in self.merge_after_block:
            out.append((side, dim))
            if merge:
                side //= 2
                dim *= 2
        return out

    @property
    def feature_dim(self) -> int:
        return self.embed_dim * 2 ** sum(self.merge_after_block)


# ---------------------------------------------------------------------------
# spatial rearrangements (pure index permutations)
# ---------------------------------------------------------------------------


def window_partition(grid, window: int):
    """(..., H, W, C) -> (..., nW, window*window, C).

    Windows enumerated row-major over the grid; tokens within a window
    row-major as well.
    """
    *lead, h, w, c = grid.shape
    if h % window or w % window:
        raise DimensionError(
            f"window_partition: grid {h}x{w} not divisible by window {window}"
        )
    hb, wb = h // window, w // window
    x = grid.reshape(*lead, hb, window, wb, window, c)
    x = np.swapaxes(x, -4, -3)
    return x.reshape(*lead, hb * wb, window * window, c)


def window_reverse(wins, h: int, w: int):
    """Exact inverse of window_partition for a grid of shape (h, w)."""
    *lead, nw, t, c = wins.shape
    window = math.isqrt(t)
    if window * window != t or nw * t != h * w or h % window or w % window:
        raise DimensionError(
            f"window_reverse: {nw} windows of {t} tokens inconsistent with "
            f"grid {h}x{w}"
        )
    hb, wb = h // window, w // window
    x = wins.reshape(*lead, hb, wb, window, window, c)
    x = np.swapaxes(x, -4, -3)
    return x.reshape(*lead, h, w, c)


def cyclic_shift(grid, s: int):
    """Toroidal roll of both token axes by -s."""
    _check_shift(grid, s)
    if s == 0:
        return grid
    return np.roll(grid, shift=(-s, -s), axis=(-3, -2))


def inverse_shift(grid, s: int):
    _check_shift(grid, s)
    if s == 0:
        return grid
    return np.roll(grid, shift=(s, s), axis=(-3, -2))


def _check_shift(grid, s: int) -> None:
    h, w = grid.shape[-3], grid.shape[-2]
    if not 0 <= s < min(h, w):
        raise DimensionError(f"shift {s} out of range for grid {h}x{w}")


@functools.lru_cache(maxsize=64)
def _mask_cached(h: int, w: int, window: int, shift: int, dtype: str):
    ids = np.zeros((h, w))
    if shift > 0:
        cnt = 0
        for hs in (slice(0, h - window), slice(h - window, h - shift),
                   slice(h - shift, None)):
            for ws in (slice(0, w - window), slice(w - window, w - shift),
                       slice(w - shift, None)):
                ids[hs, ws] = cnt
                cnt += 1
    wins = window_partition(ids[..., None], window)[..., 0]
    different = wins[:, :, None] != wins[:, None, :]
    mask = np.where(different, MASK_NEG, 0.0).astype(dtype)
    mask.setflags(write=False)
    return mask


def build_attention_mask(h: int, w: int, window: int, shift: int,
                         dtype=np.float32):
    """Additive (nW, T, T) bias: 0 for same pre-shift region, -1e9 across."""
    if shift >= window:
        raise DimensionError(f"shift {shift} must be < window {window}")
    if h % window or w % window:
        raise DimensionError(f"grid {h}x{w} not divisible by window {window}")
    return _mask_cached(h, w, window, shift, np.dtype(dtype).str)


def relative_index(window: int) -> np.ndarray:
    """(T, T) lookup into a (2*window-1)^2 bias table, by in-window offset."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window),
                                  indexing="ij"), axis=-1).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :]
    return (rel[..., 0] + window - 1) * (2 * window - 1) + rel[..., 1] + window - 1


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass
class LayerNormParams:
    gamma: Parameter
    beta: Parameter


@dataclass
class MsaParams:
    heads: int
    qkv_w: Parameter
    qkv_b: Parameter
    proj_w: Parameter
    proj_b: Parameter
    rel_bias: Parameter | None = None
    rel_index: np.ndarray | None = None
    rel_onehot: np.ndarray | None = None  # (T*T, table) scatter matrix for grads


@dataclass
class MlpParams:
    fc1_w: Parameter
    fc1_b: Parameter
    fc2_w: Parameter
    fc2_b: Parameter


@dataclass
class AttnLayerParams:
    shift: int
    window: int
    ln_eps: float
    ln_attn: LayerNormParams
    msa: MsaParams
    ln_mlp: LayerNormParams
    mlp: MlpParams


@dataclass
class SwinBlockParams:
    """One block = W-MSA layer followed by SW-MSA layer."""

    layers: tuple[AttnLayerParams, AttnLayerParams]


@dataclass
class MergeParams:
    w: Parameter
    b: Parameter


@dataclass
class BackboneParams:
    cfg: SwinConfig
    patch_w: Parameter
    patch_b: Parameter
    blocks: list[SwinBlockParams]
    merges: list[MergeParams | None]
    final_ln: LayerNormParams

    def parameters(self) -> list[Parameter]:
        out = [self.patch_w, self.patch_b]
        for i, block in enumerate(self.blocks):
            for layer in block.layers:
                out += [layer.ln_attn.gamma, layer.ln_attn.beta,
                        layer.msa.qkv_w, layer.msa.qkv_b,
                        layer.msa.proj_w, layer.msa.proj_b]
                if layer.msa.rel_bias is not None:
                    out.append(layer.msa.rel_bias)
                out += [layer.ln_mlp.gamma, layer.ln_mlp.beta,
                        layer.mlp.fc1_w, layer.mlp.fc1_b,
                        layer.mlp.fc2_w, layer.mlp.fc2_b]
            if self.merges[i] is not None:
                out += [self.merges[i].w, self.merges[i].b]
        out += [self.final_ln.gamma, self.final_ln.beta]
        return out


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _ln_init(name: str, dim: int, dtype) -> LayerNormParams:
    return LayerNormParams(
        gamma=Parameter(f"{name}.gamma", np.ones(dim, dtype=dtype)),
        beta=Parameter(f"{name}.beta", np.zeros(dim, dtype=dtype)),
    )


def _msa_init(name: str, dim: int, cfg: SwinConfig, rng, dtype) -> MsaParams:
    rel_bias = None
    rel_idx = None
    rel_onehot = None
    if cfg.use_rel_pos_bias:
        table_size = (2 * cfg.window - 1) ** 2
        table = trunc_normal(rng, (table_size, cfg.heads), dtype=dtype)
        rel_bias = Parameter(f"{name}.rel_bias", table)
        rel_idx = relative_index(cfg.window)
        flat = rel_idx.reshape(-1)
        rel_onehot = np.zeros((flat.size, table_size), dtype=dtype)
        rel_onehot[np.arange(flat.size), flat] = 1.0
    return MsaParams(
        heads=cfg.heads,
        qkv_w=Parameter(f"{name}.qkv_w", trunc_normal(rng, (dim, 3 * dim), dtype=dtype)),
        qkv_b=Parameter(f"{name}.qkv_b", np.zeros(3 * dim, dtype=dtype)),
        proj_w=Parameter(f"{name}.proj_w", trunc_normal(rng, (dim, dim), dtype=dtype)),
        proj_b=Parameter(f"{name}.proj_b", np.zeros(dim, dtype=dtype)),
        rel_bias=rel_bias,
        rel_index=rel_idx,
        rel_onehot=rel_onehot,
    )


def _mlp_init(name: str, dim: int, hidden: int, rng, dtype) -> MlpParams:
    return MlpParams(
        fc1_w=Parameter(f"{name}.fc1_w", trunc_normal(rng, (dim, hidden), dtype=dtype)),
        fc1_b=Parameter(f"{name}.fc1_b", np.zeros(hidden, dtype=dtype)),
        fc2_w=Parameter(f"{name}.fc2_w", trunc_normal(rng, (hidden, dim), dtype=dtype)),
        fc2_b=Parameter(f"{name}.fc2_b", np.zeros(dim, dtype=dtype)),
    )


def _layer_init(name: str, dim: int, shift: int, cfg: SwinConfig, rng,
                dtype) -> AttnLayerParams:
    hidden = int(round(dim * cfg.mlp_ratio))
    return AttnLayerParams(
        shift=shift,
        window=cfg.window,
        ln_eps=cfg.ln_eps,
        ln_attn=_ln_init(f"{name}.ln_attn", dim, dtype),
        msa=_msa_init(f"{name}.msa", dim, cfg, rng, dtype),
        ln_mlp=_ln_init(f"{name}.ln_mlp", dim, dtype),
        mlp=_mlp_init(f"{name}.mlp", dim, hidden, rng, dtype),
    )


def build_backbone(cfg: SwinConfig, seed: int = 0, dtype=np.float32,
                   name: str = "backbone") -> BackboneParams:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    patch_in = cfg.patch_size * cfg.patch_size * cfg.channels
    patch_w = Parameter(f"{name}.patch.w",
                        trunc_normal(rng, (patch_in, cfg.embed_dim), dtype=dtype))
    patch_b = Parameter(f"{name}.patch.b", np.zeros(cfg.embed_dim, dtype=dtype))
    blocks: list[SwinBlockParams] = []
    merges: list[MergeParams | None] = []
    for i, (_, dim) in enumerate(cfg.stage_dims()):
        layers = (
            _layer_init(f"{name}.block{i}.l0", dim, 0, cfg, rng, dtype),
            _layer_init(f"{name}.block{i}.l1", dim, cfg.shift, cfg, rng, dtype),
        )
        blocks.append(SwinBlockParams(layers=layers))
        if cfg.merge_after_block[i]:
            merges.append(MergeParams(
                w=Parameter(f"{name}.merge{i}.w",
                            trunc_normal(rng, (4 * dim, 2 * dim), dtype=dtype)),
                b=Parameter(f"{name}.merge{i}.b", np.zeros(2 * dim, dtype=dtype)),
            ))
        else:
            merges.append(None)
    final_ln = _ln_init(f"{name}.final_ln", cfg.feature_dim, dtype)
    params = BackboneParams(cfg=cfg, patch_w=patch_w, patch_b=patch_b,
                            blocks=blocks, merges=merges, final_ln=final_ln)
    names = [p.name for p in params.parameters()]
    assert len(names) == len(set(names)), "parameter names must be unique"
    return params


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def patch_embed(frames, cfg: SwinConfig, w: Parameter, b: Parameter):
    """(..., S, S, ch) -> (..., H, W, C) token grid; each non-overlapping
    patch is flattened (dy, dx, channel row-major) and linearly projected."""
    *lead, s0, s1, ch = frames.shape
    if s0 != cfg.image_size or s1 != cfg.image_size:
        raise ConfigError(
            f"patch_embed: frame {s0}x{s1} != configured {cfg.image_size}"
        )
    if ch != cfg.channels:
        raise ConfigError(f"patch_embed: {ch} channels != configured {cfg.channels}")
    p = cfg.patch_size
    hw = s0 // p
    x = frames.reshape(*lead, hw, p, hw, p, ch)
    x = np.swapaxes(x, -4, -3)
    flat = np.ascontiguousarray(x).reshape(*lead, hw, hw, p * p * ch)
    out, lin_cache = linear(flat, w, b)
    return out, (lin_cache, frames.shape, p)


def patch_embed_backward(grad_out, cache):
    lin_cache, in_shape, p = cache
    dflat = linear_backward(grad_out, lin_cache)
    *lead, s0, s1, ch = in_shape
    hw = s0 // p
    dx = dflat.reshape(*lead, hw, hw, p, p, ch)
    dx = np.swapaxes(dx, -4, -3)
    return np.ascontiguousarray(dx).reshape(in_shape)


def msa_forward(wins, params: MsaParams, mask=None):
    """Per-window multi-head self-attention.

    wins (..., nW, T, C) -> same shape. Scaled dot-product with scale
    1/sqrt(C/heads), optional additive mask (nW, T, T) and relative position
    bias, softmax, value aggregation, output projection.
    """
    *lead, nw, t, c = wins.shape
    heads = params.heads
    if c % heads:
        raise DimensionError(f"msa: channels {c} not divisible by heads {heads}")
    if mask is not None and mask.shape != (nw, t, t):
        raise DimensionError(
            f"msa: mask shape {mask.shape} != ({nw}, {t}, {t})"
        )
    hd = c // heads
    qkv, qkv_cache = linear(wins, params.qkv_w, params.qkv_b)
    parts = qkv.reshape(-1, t, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    # flatten (L*nW, heads) into one batch axis M for contiguous batched GEMMs
    q = np.ascontiguousarray(parts[0]).reshape(-1, t, hd)
    k = np.ascontiguousarray(parts[1]).reshape(-1, t, hd)
    v = np.ascontiguousarray(parts[2]).reshape(-1, t, hd)
    kt = np.ascontiguousarray(k.swapaxes(-1, -2))
    scale = 1.0 / math.sqrt(hd)
    logits = q @ kt
    logits *= scale
    if params.rel_bias is not None:
        bias = params.rel_bias.value[params.rel_index]  # (T, T, heads)
        logits = logits.reshape(-1, heads, t, t)
        logits += bias.transpose(2, 0, 1)
        logits = logits.reshape(-1, t, t)
    if mask is not None:
        logits = logits.reshape(-1, nw, heads, t, t)
        logits += mask[None, :, None]
        logits = logits.reshape(-1, t, t)
    probs, _ = softmax(logits)
    ctx = probs @ v  # (M, T, hd)
    merged = ctx.reshape(-1, heads, t, hd).transpose(0, 2, 1, 3)
    merged = np.ascontiguousarray(merged).reshape(*lead, nw, t, c)
    out, proj_cache = linear(merged, params.proj_w, params.proj_b)
    cache = (qkv_cache, proj_cache, q, k, v, probs, scale, wins.shape)
    return out, cache


def msa_backward(grad_out, cache, params: MsaParams):
    qkv_cache, proj_cache, q, k, v, probs, scale, in_shape = cache
    *lead, nw, t, c = in_shape
    heads = params.heads
    hd = c // heads
    dmerged = linear_backward(grad_out, proj_cache)
    dctx = dmerged.reshape(-1, t, heads, hd).transpose(0, 2, 1, 3)
    dctx = np.ascontiguousarray(dctx).reshape(-1, t, hd)
    dprobs = dctx @ np.ascontiguousarray(v.swapaxes(-1, -2))
    dv = np.ascontiguousarray(probs.swapaxes(-1, -2)) @ dctx
    dlogits = softmax_backward(dprobs, probs)
    if params.rel_bias is not None:
        rows = dlogits.reshape(-1, heads * t * t)
        dbias = (_ones_vec(rows.shape[0], rows.dtype) @ rows).reshape(heads, t, t)
        flat = np.ascontiguousarray(dbias.transpose(1, 2, 0)).reshape(t * t, heads)
        params.rel_bias.grad += params.rel_onehot.T @ flat
    dq = dlogits @ k
    dq *= scale
    dk = np.ascontiguousarray(dlogits.swapaxes(-1, -2)) @ q
    dk *= scale
    dqkv = np.stack([dq, dk, dv])  # (3, M, T, hd)
    dqkv = dqkv.reshape(3, -1, heads, t, hd).transpose(1, 3, 0, 2, 4)
    dqkv = np.ascontiguousarray(dqkv).reshape(*lead, nw, t, 3 * c)
    return linear_backward(dqkv, qkv_cache)


def _mlp_forward(x, p: MlpParams):
    h, c1 = linear(x, p.fc1_w, p.fc1_b)
    a, c2 = gelu(h)
    out, c3 = linear(a, p.fc2_w, p.fc2_b)
    return out, (c1, c2, c3)


def _mlp_backward(grad_out, cache, p: MlpParams):
    c1, c2, c3 = cache
    da = linear_backward(grad_out, c3)
    dh = gelu_backward(da, c2)
    return linear_backward(dh, c1)


def attn_layer_forward(grid, p: AttnLayerParams):
    """One residual attention layer: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'."""
    h, w = grid.shape[-3], grid.shape[-2]
    x, ln1_cache = layer_norm(grid, p.ln_attn.gamma, p.ln_attn.beta, p.ln_eps)
    mask = None
    if p.shift > 0:
        x = cyclic_shift(x, p.shift)
        mask = build_attention_mask(h, w, p.window, p.shift, dtype=x.dtype)
    wins = window_partition(x, p.window)
    y, msa_cache = msa_forward(wins, p.msa, mask)
    y = window_reverse(y, h, w)
    if p.shift > 0:
        y = inverse_shift(y, p.shift)
    z = grid + y
    x2, ln2_cache = layer_norm(z, p.ln_mlp.gamma, p.ln_mlp.beta, p.ln_eps)
    m, mlp_cache = _mlp_forward(x2, p.mlp)
    out = z + m
    return out, (ln1_cache, msa_cache, ln2_cache, mlp_cache, (h, w))


def attn_layer_backward(grad_out, cache, p: AttnLayerParams):
    ln1_cache, msa_cache, ln2_cache, mlp_cache, (h, w) = cache
    dz = grad_out.copy()
    dx2 = _mlp_backward(grad_out, mlp_cache, p.mlp)
    dz += layer_norm_backward(dx2, ln2_cache)
    dgrid = dz.copy()
    dy = dz
    if p.shift > 0:
        dy = cyclic_shift(dy, p.shift)
    dwins = window_partition(dy, p.window)
    dx = msa_backward(dwins, msa_cache, p.msa)
    dx = window_reverse(dx, h, w)
    if p.shift > 0:
        dx = inverse_shift(dx, p.shift)
    dgrid += layer_norm_backward(dx, ln1_cache)
    return dgrid


def swin_block(grid, block: SwinBlockParams):
    """W-MSA layer then SW-MSA layer; output grid has the input's shape."""
    h, w = grid.shape[-3], grid.shape[-2]
    window = block.layers[0].window
    if h % window or w % window:
        raise ConfigError(f"swin_block: grid {h}x{w} not divisible by window {window}")
    mid, c0 = attn_layer_forward(grid, block.layers[0])
    out, c1 = attn_layer_forward(mid, block.layers[1])
    return out, (c0, c1)


def swin_block_backward(grad_out, cache, block: SwinBlockParams):
    c0, c1 = cache
    dmid = attn_layer_backward(grad_out, c1, block.layers[1])
    return attn_layer_backward(dmid, c0, block.layers[0])


def patch_merge(grid, p: MergeParams):
    """(..., H, W, C) -> (..., H/2, W/2, 2C): each 2x2 neighborhood (row-major)
    concatenated to 4C, then linearly reduced."""
    *lead, h, w, c = grid.shape
    if h % 2 or w % 2:
        raise DimensionError(f"patch_merge: odd grid {h}x{w}")
    x = grid.reshape(*lead, h // 2, 2, w // 2, 2, c)
    x = np.swapaxes(x, -4, -3)
    flat = np.ascontiguousarray(x).reshape(*lead, h // 2, w // 2, 4 * c)
    out, lin_cache = linear(flat, p.w, p.b)
    return out, (lin_cache, grid.shape)


def patch_merge_backward(grad_out, cache):
    lin_cache, in_shape = cache
    *lead, h, w, c = in_shape
    dflat = linear_backward(grad_out, lin_cache)
    dx = dflat.reshape(*lead, h // 2, w // 2, 2, 2, c)
    dx = np.swapaxes(dx, -4, -3)
    return np.ascontiguousarray(dx).reshape(in_shape)


def backbone_forward_cached(frames, params: BackboneParams):
    """(..., S, S, ch) -> (..., D) pooled features, keeping backward caches."""
    cfg = params.cfg
    grid, embed_cache = patch_embed(frames, cfg, params.patch_w, params.patch_b)
    stage_caches = []
    for block, merge in zip(params.blocks, params.merges):
        grid, bcache = swin_block(grid, block)
        mcache = None
        if merge is not None:
            grid, mcache = patch_merge(grid, merge)
        stage_caches.append((bcache, mcache))
    normed, ln_cache = layer_norm(grid, params.final_ln.gamma,
                                  params.final_ln.beta, cfg.ln_eps)
    feats = normed.mean(axis=(-3, -2))
    cache = (embed_cache, stage_caches, ln_cache, normed.shape)
    return feats, cache


def backbone_backward(grad_feats, cache, params: BackboneParams):
    embed_cache, stage_caches, ln_cache, grid_shape = cache
    h, w = grid_shape[-3], grid_shape[-2]
    dnormed = np.broadcast_to(
        grad_feats[..., None, None, :] / (h * w), grid_shape
    )
    dgrid = layer_norm_backward(dnormed, ln_cache)
    for (bcache, mcache), block, merge in zip(
        reversed(stage_caches), reversed(params.blocks), reversed(params.merges)
    ):
        if merge is not None:
            dgrid = patch_merge_backward(dgrid, mcache)
        dgrid = swin_block_backward(dgrid, bcache, block)
    return patch_embed_backward(dgrid, embed_cache)


def backbone_forward(frames, cfg: SwinConfig, params: BackboneParams):
    """Pure feature extraction; discards caches."""
    if params.cfg is not cfg and params.cfg != cfg:
        raise ConfigError("backbone_forward: params built for a different config")
    feats, _ = backbone_forward_cached(frames, params)
    return feats
