"""Full mirror-detection network: shared encoder over the active
modalities, per-level correspondence fusion, boundary-refining decoder,
and one logit head per pyramid level.

Construction is fully determined by (config, seed): the config's seed
feeds a single numpy Generator, and modules draw from it in a fixed
order, so two models built from equal configs are bit-identical.

Checkpoints serialize the config echo, step/epoch counters, every
parameter, and (when training) optimizer moments into one MMCK file.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import fileio
from . import tensor as T
from .backbone import Backbone, BackboneConfig
from .correspondence import CorrespondenceExtractor, SimpleFusion
from .decoder import BoundaryDecoder
from .nn import Module
from .scan import ALL_ORDERS, HORIZONTAL_ORDERS, VERTICAL_ORDERS
from .tensor import ShapeError, Tensor

MODALITIES = ("rgb", "depth", "flow")

_MODE_SETS = {
    "image": ("rgb", "depth"),
    "video": ("rgb", "depth", "flow"),
}


@dataclass
class ModelConfig:
    mode: str = "video"
    modalities: tuple = None
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    d_state: int = 16
    gate_on_product: bool = False
    scan_directions: str = "all"
    use_correspondence: bool = True
    use_refine_decoder: bool = True
    zero_residual_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.modalities is None:
            if self.mode not in _MODE_SETS:
                raise ValueError(f"unknown mode {self.mode!r} (use 'image' or 'video')")
            self.modalities = _MODE_SETS[self.mode]
        self.modalities = tuple(self.modalities)
        unknown = [m for m in self.modalities if m not in MODALITIES]
        if unknown or not self.modalities:
            raise ValueError(f"modalities must be a non-empty subset of {MODALITIES}")
        # Canonical order, no duplicates.
        self.modalities = tuple(m for m in MODALITIES if m in self.modalities)
        derived = "video" if "flow" in self.modalities else "image"
        if self.mode in _MODE_SETS and _MODE_SETS[self.mode] != self.modalities:
            self.mode = derived
        elif self.mode not in _MODE_SETS:
            self.mode = derived
        if self.scan_directions not in ("all", "horizontal", "vertical"):
            raise ValueError(f"unknown scan_directions {self.scan_directions!r}")

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        d["backbone"]["stage_depths"] = list(self.backbone.stage_depths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "backbone" in d:
            d["backbone"] = BackboneConfig(**d["backbone"])
        if d.get("modalities") is not None:
            d["modalities"] = tuple(d["modalities"])
        return cls(**d)


def _scan_orders(directions):
    return {"all": ALL_ORDERS, "horizontal": HORIZONTAL_ORDERS,
            "vertical": VERTICAL_ORDERS}[directions]


class MirrorMamba(Module):
    def __init__(self, config=None):
        config = config or ModelConfig()
        rng = np.random.default_rng(config.seed)
        orders = _scan_orders(config.scan_directions)
        self.encoder = Backbone(rng, config.backbone, d_state=config.d_state,
                                orders=orders,
                                zero_residual_init=config.zero_residual_init)
        channels = config.backbone.channels
        k = len(config.modalities)
        if config.use_correspondence:
            self.extractor = CorrespondenceExtractor(
                rng, channels, k, d_state=config.d_state,
                directions=config.scan_directions,
                gate_on_product=config.gate_on_product,
                zero_residual_init=config.zero_residual_init)
        else:
            self.extractor = SimpleFusion(rng, channels, k)
        self.decoder = BoundaryDecoder(rng, channels, d_state=config.d_state,
                                       use_refine=config.use_refine_decoder,
                                       zero_residual_init=config.zero_residual_init)
        self.config = config

    # -- forward -------------------------------------------------------------

    def _gather_inputs(self, rgb, depth, flow):
        given = {"rgb": rgb, "depth": depth, "flow": flow}
        inputs = []
        for m in MODALITIES:
            if m in self.config.modalities:
                if given[m] is None:
                    raise ValueError(f"model configured for {self.config.modalities} "
                                     f"but {m!r} input is missing")
                inputs.append(given[m])
            elif given[m] is not None:
                raise ValueError(f"model configured for {self.config.modalities} "
                                 f"does not accept {m!r} input")
        shape = inputs[0].shape
        for t in inputs:
            if t.ndim != 4 or t.shape[1] != 3:
                raise ShapeError(f"modality inputs must be [B,3,H,W], got {t.shape}")
            if t.shape != shape:
                raise ShapeError(f"modality shapes differ: {t.shape} vs {shape}")
        return inputs

    def __call__(self, rgb, depth=None, flow=None):
        """Returns {'logits': per-level logit maps (finest first),
        'prob': full-resolution probability map in [0,1]}."""
        inputs = self._gather_inputs(rgb, depth, flow)
        h, w = inputs[0].shape[2], inputs[0].shape[3]
        pyramids = [self.encoder(t) for t in inputs]
        fused = self.extractor(pyramids)
        logits = self.decoder(fused)
        prob = T.sigmoid(T.bilinear_resize(logits[0], h, w))
        return {"logits": logits, "prob": prob}

    forward = __call__

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, path, step=0, epoch=0, extra_tensors=None, extra_meta=None):
        tensors = dict(self.state_arrays())
        if extra_tensors:
            for name, arr in extra_tensors.items():
                if name in tensors:
                    raise ValueError(f"extra tensor name collides with parameter: {name}")
                tensors[name] = arr
        meta = {"kind": "mirrormamba-checkpoint", "config": self.config.to_dict(),
                "step": int(step), "epoch": int(epoch)}
        if extra_meta:
            meta.update(extra_meta)
        fileio.write_checkpoint(path, tensors, meta)

    @classmethod
    def load_checkpoint(cls, path):
        """Rebuild the model from a checkpoint; returns (model, tensors, meta).

        ``tensors`` holds any non-parameter entries (optimizer moments),
        keyed as stored.
        """
        tensors, meta = fileio.read_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["config"]))
        own = dict(model.named_parameters())
        params = {k: v for k, v in tensors.items() if k in own}
        rest = {k: v for k, v in tensors.items() if k not in own}
        model.load_state_arrays(params)
        return model, rest, meta

    # -- reporting ---------------------------------------------------------------

    def parameter_census(self):
        """Per-parameter (name, shape, count) rows plus the total."""
        rows = [(name, tuple(p.shape), p.size) for name, p in self.named_parameters()]
        return {"rows": rows, "total": sum(r[2] for r in rows)}
