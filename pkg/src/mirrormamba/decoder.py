"""Boundary-refining decoder cascade from the coarsest level to the finest.

The running feature starts as the coarsest fused level. At each level it
is refined by a cross-selective scan against the level's fused feature
(the running feature supplies the scan readout), a plain selective scan,
and channel attention driven by the fused feature; a 1x1 head emits that
level's logit map, and the running feature is merged with the fused
level, upsampled 2x and projected into the next level's width. All
refine stages are residual with zero-initialized output projections, so
at initialization the cascade passes features through unchanged.

Scans here run in the M1 order only; multi-direction traversal lives in
the correspondence extractor.
"""

from __future__ import annotations

from . import tensor as T
from .nn import Conv2d, Linear, Module, ModuleList
from .scan import ScanBlock, ScanOrder
from .tensor import ShapeError


class ChannelAttention(Module):
    """Scale x per channel by gates squeezed from a context map.

    The context is global-average-pooled, pushed through a reduction-4
    bottleneck with SiLU, and squashed to (0,1) channel weights. The
    scaled tensor returns through a zero-initialized 1x1 projection and
    a residual, so a fresh module is an exact pass-through.
    """

    def __init__(self, rng, channels, reduction=4, zero_residual_init=True):
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(rng, channels, hidden)
        self.fc2 = Linear(rng, hidden, channels)
        self.proj = Conv2d(rng, channels, channels, kernel_size=1, zero_init=zero_residual_init)

    def weights(self, context):
        """(0,1) channel gates, shape [B, C]."""
        return T.sigmoid(self.fc2(T.silu(self.fc1(T.global_avg_pool(context)))))

    def __call__(self, x, context):
        if x.shape != context.shape:
            raise ShapeError(f"channel attention: x {x.shape} vs context {context.shape}")
        w = self.weights(context)
        b, c = w.shape
        scaled = x * T.reshape(w, (b, c, 1, 1))
        return x + self.proj(scaled)


class RefineUnit(Module):
    """Cross-selective scan, selective scan, then channel attention."""

    def __init__(self, rng, channels, d_state=16, zero_residual_init=True):
        self.cross_scan = ScanBlock(rng, channels, d_state=d_state,
                                    zero_residual_init=zero_residual_init)
        self.self_scan = ScanBlock(rng, channels, d_state=d_state,
                                   zero_residual_init=zero_residual_init)
        self.channel_attn = ChannelAttention(rng, channels,
                                             zero_residual_init=zero_residual_init)

    def __call__(self, f_level, f_running):
        x = self.cross_scan(f_level, orders=(ScanOrder.M1,), guide=f_running)
        x = self.self_scan(x, orders=(ScanOrder.M1,))
        return self.channel_attn(x, context=f_level)


class Expand(Module):
    """Bilinear 2x upsample then 1x1 projection into the next level's width."""

    def __init__(self, rng, in_channels, out_channels):
        self.proj = Conv2d(rng, in_channels, out_channels, kernel_size=1)

    def __call__(self, x):
        b, c, h, w = x.shape
        return self.proj(T.bilinear_resize(x, 2 * h, 2 * w))


# mirror rects span 1/6 to 1/3 of each canvas side, so foreground occupies
# about 1/16 of the pixels; starting the heads at that base rate instead of
# 0.5 spares the optimizer the first dozen epochs of re-learning the prior
HEAD_BIAS_PRIOR = -2.7


class PredictionHead(Module):
    """1x1 convolution to a single logit channel, biased to the foreground rate."""

    def __init__(self, rng, channels, bias_init=HEAD_BIAS_PRIOR):
        self.proj = Conv2d(rng, channels, 1, kernel_size=1)
        self.proj.bias.data[...] = bias_init

    def __call__(self, x):
        return self.proj(x)


class BoundaryDecoder(Module):
    """Level 4 -> 1 cascade emitting one supervised logit map per level.

    With ``use_refine=False`` the three refine stages are dropped and the
    cascade degenerates to merge-and-expand only (the module-ablation
    baseline); heads and expansions are retained.
    """

    def __init__(self, rng, channels_per_level, d_state=16, use_refine=True,
                 zero_residual_init=True):
        chs = tuple(channels_per_level)
        if use_refine:
            self.refine = ModuleList([
                RefineUnit(rng, ch, d_state=d_state, zero_residual_init=zero_residual_init)
                for ch in chs
            ])
        self.expands = ModuleList([
            Expand(rng, chs[i], chs[i - 1]) for i in range(1, len(chs))
        ])
        self.heads = ModuleList([PredictionHead(rng, ch) for ch in chs])
        self.use_refine = use_refine

    def __call__(self, f_levels):
        """f_levels: fused features, finest first -> logit maps, finest first."""
        if len(f_levels) != len(self.heads):
            raise ShapeError(f"expected {len(self.heads)} levels, got {len(f_levels)}")
        running = f_levels[-1]
        logits = [None] * len(f_levels)
        for i in range(len(f_levels) - 1, -1, -1):
            if self.use_refine:
                running = self.refine[i](f_levels[i], running)
            logits[i] = self.heads[i](running)
            if i > 0:
                running = self.expands[i - 1](running + f_levels[i])
        return logits
