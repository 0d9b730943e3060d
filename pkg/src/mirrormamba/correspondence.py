"""Multi-direction correspondence extraction across modality features.

Per pyramid level, the modality features are concatenated and compressed
into a carrier tensor T and a probe tensor F1 by two independent 3x3
convolutions. Directional attention then runs the probe through a
horizontally conjugate pair of scan blocks (M1, M2), fuses the pair with
a 3x3 convolution and a sigmoid into a gate, and multiplies the carrier;
a second, vertically conjugate pass (M3, M4) over that product produces
the final gate. Both gates multiply the carrier T by default; gating the
intermediate product instead is available behind a flag.

Mirrors reflect their surroundings as horizontal or vertical flips, and
the (M1, M2) / (M3, M4) pairs traverse the image in mutually reversed
sequences, which is what lets the attention pick up flip correspondence
at any position. Unlike the encoder, every directional scan block here
owns its parameters.
"""

from __future__ import annotations

from . import tensor as T
from .nn import Conv2d, Module, ModuleList
from .scan import HORIZONTAL_ORDERS, VERTICAL_ORDERS, ScanBlock
from .tensor import ShapeError


def fuse_concat(features):
    """Channel-concatenate per-modality feature maps (in modality order)."""
    features = list(features)
    if not 1 <= len(features) <= 3:
        raise ValueError(f"expected 1 to 3 modality features, got {len(features)}")
    base = features[0].shape
    for f in features[1:]:
        if f.shape != base:
            raise ShapeError(f"modality feature shapes differ: {f.shape} vs {base}")
    if len(features) == 1:
        return features[0]
    return T.concat(features, axis=1)


class DirectionalAttention(Module):
    """Gate map from a conjugate scan-order pair.

    Runs the input through one scan block per order of the pair (own
    parameters each), concatenates the two results channel-wise, fuses
    with a 3x3 convolution back to the input width, and squashes through
    a sigmoid, so the gate lies strictly inside (0, 1).
    """

    def __init__(self, rng, channels, orders, d_state=16, zero_residual_init=True):
        self.blocks = ModuleList([
            ScanBlock(rng, channels, d_state=d_state, zero_residual_init=zero_residual_init)
            for _ in orders
        ])
        self.fuse = Conv2d(rng, len(orders) * channels, channels, kernel_size=3, padding=1)
        self.orders = tuple(orders)

    def __call__(self, f):
        scanned = [blk(f, orders=(o,)) for blk, o in zip(self.blocks, self.orders)]
        return T.sigmoid(self.fuse(T.concat(scanned, axis=1)))


class CorrespondenceLevel(Module):
    """Fuse one pyramid level's modalities and extract flip correspondence."""

    def __init__(self, rng, channels, num_modalities, d_state=16,
                 directions="all", gate_on_product=False, zero_residual_init=True):
        if directions not in ("all", "horizontal", "vertical"):
            raise ValueError(f"unknown direction set {directions!r}")
        kc = num_modalities * channels
        self.compress_t = Conv2d(rng, kc, channels, kernel_size=3, padding=1)
        self.compress_f = Conv2d(rng, kc, channels, kernel_size=3, padding=1)
        if directions in ("all", "horizontal"):
            self.horizontal = DirectionalAttention(
                rng, channels, HORIZONTAL_ORDERS, d_state=d_state,
                zero_residual_init=zero_residual_init)
        if directions in ("all", "vertical"):
            self.vertical = DirectionalAttention(
                rng, channels, VERTICAL_ORDERS, d_state=d_state,
                zero_residual_init=zero_residual_init)
        self.directions = directions
        self.gate_on_product = gate_on_product

    def compress(self, f_concat):
        return self.compress_t(f_concat), self.compress_f(f_concat)

    def __call__(self, features):
        carrier, probe = self.compress(fuse_concat(features))
        if self.directions == "horizontal":
            return self.horizontal(probe) * carrier
        if self.directions == "vertical":
            return self.vertical(probe) * carrier
        product = self.horizontal(probe) * carrier
        gate = self.vertical(product)
        return gate * (product if self.gate_on_product else carrier)


class CorrespondenceExtractor(Module):
    """One correspondence unit per pyramid level."""

    def __init__(self, rng, channels_per_level, num_modalities, d_state=16,
                 directions="all", gate_on_product=False, zero_residual_init=True):
        self.levels = ModuleList([
            CorrespondenceLevel(rng, ch, num_modalities, d_state=d_state,
                                directions=directions, gate_on_product=gate_on_product,
                                zero_residual_init=zero_residual_init)
            for ch in channels_per_level
        ])

    def __call__(self, pyramids):
        """pyramids: per-modality list of per-level features -> per-level fused."""
        return [
            level([pyr[i] for pyr in pyramids])
            for i, level in enumerate(self.levels)
        ]


class SimpleFusion(Module):
    """Correspondence-free fallback: concat plus one 3x3 convolution per level."""

    def __init__(self, rng, channels_per_level, num_modalities):
        self.levels = ModuleList([
            Conv2d(rng, num_modalities * ch, ch, kernel_size=3, padding=1)
            for ch in channels_per_level
        ])

    def __call__(self, pyramids):
        return [
            level(fuse_concat([pyr[i] for pyr in pyramids]))
            for i, level in enumerate(self.levels)
        ]
