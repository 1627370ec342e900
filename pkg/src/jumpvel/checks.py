"""Gradient-integrity suite: wraps each parameterized layer (and the full
backbone / fusion predict path) as a checkable fragment and runs the
finite-difference checker over all of them at float64.

Affine-only fragments must reach 1e-6 relative error; everything through
softmax/GELU/normalization gets 1e-4 (1e-5 for layer_norm and patch_merge,
matching what central differences support at 64-bit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fusion, swin
from ._runtime import tune_process
from .numerics import CheckReport, Parameter, grad_check, linear, linear_backward

F64 = np.float64


class LinearFragment:
    name = "linear"

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w = Parameter("w", rng.standard_normal((5, 3)))
        self.b = Parameter("b", rng.standard_normal(3))

    def make_input(self, rng):
        return rng.standard_normal((4, 5))

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x):
        return linear(x, self.w, self.b)

    def backward(self, grad_out, cache):
        return linear_backward(grad_out, cache)


class LayerNormFragment:
    name = "layer_norm"

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.ln = swin.LayerNormParams(
            gamma=Parameter("gamma", 1.0 + 0.1 * rng.standard_normal(8)),
            beta=Parameter("beta", 0.1 * rng.standard_normal(8)),
        )

    def make_input(self, rng):
        return rng.standard_normal((6, 8))

    def parameters(self):
        return [self.ln.gamma, self.ln.beta]

    def forward(self, x):
        from .numerics import layer_norm
        return layer_norm(x, self.ln.gamma, self.ln.beta, 1e-5)

    def backward(self, grad_out, cache):
        from .numerics import layer_norm_backward
        return layer_norm_backward(grad_out, cache)


def _small_cfg() -> swin.SwinConfig:
    return swin.SwinConfig(image_size=16, patch_size=4, embed_dim=8,
                           num_blocks=1, heads=2, window=2, mlp_ratio=2.0,
                           merge_after_block=(False,), use_rel_pos_bias=True)


class MsaFragment:
    """Windowed attention with relative position bias and a shift mask."""

    name = "msa_forward"

    def __init__(self, seed: int = 0):
        cfg = _small_cfg()
        rng = np.random.default_rng(seed)
        self.params = swin._msa_init("msa", 8, cfg, rng, F64)
        self.mask = swin.build_attention_mask(4, 4, 2, 1, dtype=F64)

    def make_input(self, rng):
        return rng.standard_normal((4, 4, 8))  # (nW, T, C)

    def parameters(self):
        p = self.params
        return [p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.rel_bias]

    def forward(self, x):
        return swin.msa_forward(x, self.params, self.mask)

    def backward(self, grad_out, cache):
        return swin.msa_backward(grad_out, cache, self.params)


class SwinBlockFragment:
    name = "swin_block"

    def __init__(self, seed: int = 0):
        cfg = _small_cfg()
        rng = np.random.default_rng(seed)
        self.block = swin.SwinBlockParams(layers=(
            swin._layer_init("block.l0", 8, 0, cfg, rng, F64),
            swin._layer_init("block.l1", 8, cfg.shift, cfg, rng, F64),
        ))

    def make_input(self, rng):
        return rng.standard_normal((4, 4, 8))  # (H, W, C)

    def parameters(self):
        out = []
        for layer in self.block.layers:
            out += [layer.ln_attn.gamma, layer.ln_attn.beta,
                    layer.msa.qkv_w, layer.msa.qkv_b,
                    layer.msa.proj_w, layer.msa.proj_b, layer.msa.rel_bias,
                    layer.ln_mlp.gamma, layer.ln_mlp.beta,
                    layer.mlp.fc1_w, layer.mlp.fc1_b,
                    layer.mlp.fc2_w, layer.mlp.fc2_b]
        return out

    def forward(self, x):
        return swin.swin_block(x, self.block)

    def backward(self, grad_out, cache):
        return swin.swin_block_backward(grad_out, cache, self.block)


class PatchMergeFragment:
    name = "patch_merge"

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.merge = swin.MergeParams(
            w=Parameter("w", 0.2 * rng.standard_normal((24, 12))),
            b=Parameter("b", 0.1 * rng.standard_normal(12)),
        )

    def make_input(self, rng):
        return rng.standard_normal((4, 4, 6))

    def parameters(self):
        return [self.merge.w, self.merge.b]

    def forward(self, x):
        return swin.patch_merge(x, self.merge)

    def backward(self, grad_out, cache):
        return swin.patch_merge_backward(grad_out, cache)


class BackboneFragment:
    """Full desk-config backbone on a single frame."""

    name = "backbone"

    def __init__(self, seed: int = 0):
        self.params = swin.build_backbone(swin.SwinConfig(), seed=seed, dtype=F64)

    def make_input(self, rng):
        return rng.standard_normal((32, 32, 1))

    def parameters(self):
        return self.params.parameters()

    def forward(self, x):
        return swin.backbone_forward_cached(x, self.params)

    def backward(self, grad_out, cache):
        return swin.backbone_backward(grad_out, cache, self.params)


class FusionPredictFragment:
    """Loss through predict: combined-view model on a short 2-frame clip."""

    name = "fusion_predict"

    def __init__(self, seed: int = 0):
        cfg = fusion.FusionConfig(swin=swin.SwinConfig(), view_selection="combined",
                                  view_dim=8)
        self.model = fusion.build_fusion_model(cfg, seed=seed, dtype=F64)

    def make_input(self, rng):
        return rng.standard_normal((1, 3, 2, 32, 32, 1))

    def parameters(self):
        return self.model.parameters()

    def forward(self, x):
        return fusion.forward_batch(x, self.model)

    def backward(self, grad_out, cache):
        return fusion.backward_batch(grad_out, cache, self.model)


@dataclass
class SuiteItem:
    fragment: object
    tolerance: float
    max_elems_per_param: int = 24
    max_input_elems: int = 128


def default_suite() -> list[SuiteItem]:
    return [
        SuiteItem(LinearFragment(), 1e-6),
        SuiteItem(LayerNormFragment(), 1e-5),
        SuiteItem(MsaFragment(), 1e-4),
        SuiteItem(SwinBlockFragment(), 1e-4),
        SuiteItem(PatchMergeFragment(), 1e-5),
        SuiteItem(BackboneFragment(), 1e-4, max_elems_per_param=12,
                  max_input_elems=96),
        SuiteItem(FusionPredictFragment(), 1e-4, max_elems_per_param=8,
                  max_input_elems=48),
    ]


def run_gradcheck_suite(tolerance: float | None = None,
                        seed: int = 0) -> list[CheckReport]:
    """Run every fragment; ``tolerance`` overrides all per-fragment defaults."""
    tune_process()
    reports = []
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(77,)))
    for item in default_suite():
        x = item.fragment.make_input(rng)
        reports.append(grad_check(
            item.fragment, x,
            tolerance if tolerance is not None else item.tolerance,
            max_elems_per_param=item.max_elems_per_param,
            max_input_elems=item.max_input_elems,
            seed=seed,
        ))
    return reports
