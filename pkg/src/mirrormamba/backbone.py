"""Four-stage visual state-space encoder producing a feature pyramid.

One parameter set serves every input branch: the model runs each
modality (RGB, depth, flow) through the same encoder, so parameter count
is independent of how many branches are active.

Stages sit at strides 4/8/16/32 with channels C, 2C, 4C, 8C. Each stage
is a stack of VSS blocks; a stride-2 convolution downsamples between
stages (not after the last). Pyramid levels are taken before the
downsample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module, ModuleList
from .scan import ALL_ORDERS, ScanBlock
from .tensor import ShapeError


@dataclass
class BackboneConfig:
    base_channels: int = 16
    stage_depths: tuple = (1, 1, 2, 1)
    input_channels: int = 3

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        if len(self.stage_depths) != 4:
            raise ValueError(f"exactly 4 stages required, got {len(self.stage_depths)}")
        if self.base_channels < 1 or any(d < 1 for d in self.stage_depths):
            raise ValueError("base_channels and stage depths must be positive")

    @property
    def channels(self):
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)


class PatchEmbed(Module):
    """4x4 stride-4 convolution plus layer norm: [B,3,H,W] -> [B,C,H/4,W/4]."""

    def __init__(self, rng, in_channels, out_channels):
        self.proj = Conv2d(rng, in_channels, out_channels, kernel_size=4, stride=4)
        self.norm = LayerNorm(out_channels)

    def __call__(self, x):
        y = self.proj(x)
        y = T.permute(y, (0, 2, 3, 1))
        y = self.norm(y)
        return T.permute(y, (0, 3, 1, 2))


class Mlp(Module):
    """Pre-norm residual MLP: LN -> expand x2 -> SiLU -> project back."""

    def __init__(self, rng, channels, zero_residual_init=True):
        self.norm = LayerNorm(channels)
        self.fc1 = Linear(rng, channels, 2 * channels)
        self.fc2 = Linear(rng, 2 * channels, channels, zero_init=zero_residual_init)

    def __call__(self, x):
        b, c, h, w = x.shape
        seq = T.reshape(T.permute(x, (0, 2, 3, 1)), (b, h * w, c))
        out = self.fc2(T.silu(self.fc1(self.norm(seq))))
        return x + T.permute(T.reshape(out, (b, h, w, c)), (0, 3, 1, 2))


class VSSBlock(Module):
    """Directionally averaged scan block followed by a channel MLP.

    The scan sub-block is applied with every configured order using one
    shared parameter set, and the per-order outputs are averaged (the
    residual is common to all orders, so this equals averaging full
    block outputs).
    """

    def __init__(self, rng, channels, d_state=16, orders=ALL_ORDERS, zero_residual_init=True):
        self.scan = ScanBlock(rng, channels, d_state=d_state, zero_residual_init=zero_residual_init)
        self.mlp = Mlp(rng, channels, zero_residual_init=zero_residual_init)
        self.orders = tuple(orders)

    def __call__(self, x):
        return self.mlp(self.scan(x, orders=self.orders))


class Downsample(Module):
    """Stride-2 3x3 convolution doubling the channel count."""

    def __init__(self, rng, channels):
        self.conv = Conv2d(rng, channels, 2 * channels, kernel_size=3, stride=2, padding=1)

    def __call__(self, x):
        return self.conv(x)


class Backbone(Module):
    def __init__(self, rng, config=None, d_state=16, orders=ALL_ORDERS, zero_residual_init=True):
        config = config or BackboneConfig()
        self.patch_embed = PatchEmbed(rng, config.input_channels, config.base_channels)
        stages = []
        downs = []
        for i, (ch, depth) in enumerate(zip(config.channels, config.stage_depths)):
            stages.append(ModuleList([
                VSSBlock(rng, ch, d_state=d_state, orders=orders,
                         zero_residual_init=zero_residual_init)
                for _ in range(depth)
            ]))
            if i < 3:
                downs.append(Downsample(rng, ch))
        self.stages = ModuleList(stages)
        self.downsamples = ModuleList(downs)
        self.config = config

    def extract_pyramid(self, image):
        """[B, 3, H, W] -> four feature maps at strides 4/8/16/32."""
        if image.ndim != 4 or image.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"backbone expects [B,{self.config.input_channels},H,W], got {image.shape}"
            )
        h, w = image.shape[2], image.shape[3]
        if h % 32 or w % 32 or h == 0 or w == 0:
            raise ValueError(f"spatial dims must be positive multiples of 32, got {h}x{w}")
        x = self.patch_embed(image)
        levels = []
        for i, stage in enumerate(self.stages):
            for block in stage:
                x = block(x)
            levels.append(x)
            if i < 3:
                x = self.downsamples[i](x)
        return levels

    __call__ = extract_pyramid
