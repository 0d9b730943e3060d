"""Training loop: AdamW, per-step polynomial LR decay, deep supervision.

The loss is an unweighted sum of binary cross-entropy terms, one per
pyramid level, each against the ground-truth mask bilinearly resized to
that level's resolution. Shuffling is re-seeded from (seed, epoch), so a
resumed run replays the exact batch order of an uninterrupted one.
"""

from __future__ import annotations

import json
import math
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np

from . import fileio
from .model import MirrorMamba, ModelConfig
from .tensor import (NumericsError, Tensor, bce_with_logits, bilinear_resize,
                     gradients)


class TrainingDiverged(RuntimeError):
    def __init__(self, step, lr, grad_norm):
        super().__init__(f"non-finite loss at step {step} (lr={lr:.3e}, "
                         f"grad_norm={grad_norm:.3e})")
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm


@dataclass
class TrainConfig:
    lr: float = 6e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    poly_power: float = 0.9
    batch_size: int = 8
    epochs: int = 40
    seed: int = 0
    crop_size: int = 96

    def __post_init__(self):
        if min(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
               self.poly_power) < 0:
            raise ValueError("negative hyperparameter")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.crop_size % 32:
            raise ValueError("crop_size must be a multiple of 32")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def poly_lr(step, total_steps, cfg):
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return cfg.lr * (1.0 - step / total_steps) ** cfg.poly_power


class AdamW:
    """Decoupled weight decay: theta *= (1 - lr*wd) before the moment step."""

    def __init__(self, params, cfg):
        self.params = list(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads, lr):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if cfg.weight_decay:
                p.data *= 1.0 - lr * cfg.weight_decay
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def state_arrays(self, names):
        out = {}
        for name, m, v in zip(names, self.m, self.v):
            out[f"opt.m.{name}"] = m
            out[f"opt.v.{name}"] = v
        return out

    def load_state_arrays(self, names, arrays, t):
        for i, name in enumerate(names):
            for store, key in ((self.m, f"opt.m.{name}"), (self.v, f"opt.v.{name}")):
                if key not in arrays:
                    raise ValueError(f"checkpoint missing optimizer array {key}")
                if arrays[key].shape != store[i].shape:
                    raise ValueError(f"optimizer array {key} has shape "
                                     f"{arrays[key].shape}, expected {store[i].shape}")
                store[i] = arrays[key].astype(store[i].dtype, copy=True)
        self.t = int(t)


@contextmanager
def frozen_params(model):
    """Run forward passes without building autodiff graphs."""
    params = [p for _, p in model.named_parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


# -- data plumbing ---------------------------------------------------------------


def _sample_arrays(sample):
    if "arrays" in sample:
        return sample["arrays"]
    return sample


def _crop(arr, top, left, size):
    return arr[..., top:top + size, left:left + size]


def make_batch(samples, modalities, rng=None, crop_size=None):
    """Stack samples into model inputs plus a [B,1,H,W] target."""
    inputs = {m: [] for m in modalities}
    masks = []
    for s in samples:
        a = _sample_arrays(s)
        h, w = a["mask"].shape
        if crop_size and (h > crop_size or w > crop_size):
            if h < crop_size or w < crop_size:
                raise ValueError(f"sample {h}x{w} smaller than crop {crop_size}")
            top = int(rng.integers(0, h - crop_size + 1)) if rng is not None else (h - crop_size) // 2
            left = int(rng.integers(0, w - crop_size + 1)) if rng is not None else (w - crop_size) // 2
        else:
            top = left = 0
        size = crop_size or h
        for m in modalities:
            inputs[m].append(_crop(a[m], top, left, size))
        masks.append(_crop(a["mask"], top, left, size))
    batch = {m: Tensor(np.stack(v)) for m, v in inputs.items()}
    target = Tensor(np.stack(masks)[:, None])
    return batch, target


def supervision_loss(logits, target):
    """Sum of per-level BCE against the resized target; returns (loss, per-level)."""
    terms = []
    for logit in logits:
        _, _, h, w = logit.data.shape
        gt = bilinear_resize(target, h, w)
        terms.append(bce_with_logits(logit, gt))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total, terms


def predict_probs(model, samples, batch_size=8):
    """Probability maps for a list of samples, graph-free."""
    mods = model.config.modalities
    out = []
    with frozen_params(model):
        for i in range(0, len(samples), batch_size):
            batch, _ = make_batch(samples[i:i + batch_size], mods)
            prob = model(**batch)["prob"].data
            out.extend(prob[:, 0].copy())
    return out


def evaluate_model(model, samples, batch_size=8, **metric_kw):
    from . import metrics
    probs = predict_probs(model, samples, batch_size)
    gts = [_sample_arrays(s)["mask"] for s in samples]
    return metrics.evaluate(probs, gts, **metric_kw)


# -- the loop --------------------------------------------------------------------


def train(model, dataset, cfg, out_dir=None, log_path=None, resume_from=None,
          on_epoch_end=None):
    """Optimize ``model`` on ``dataset``; returns the training log rows.

    ``dataset`` is a list of samples (dicts with rgb/depth/flow/mask arrays,
    or manifest entries carrying an ``arrays`` dict). With ``out_dir`` set,
    a checkpoint lands there after every epoch; ``resume_from`` restores
    model, optimizer moments and position from such a checkpoint and
    continues bit-exactly.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    params = list(model.named_parameters())
    names = [n for n, _ in params]
    opt = AdamW([p for _, p in params], cfg)

    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    start_epoch = 0
    global_step = 0

    if resume_from is not None:
        arrays, meta = fileio.read_checkpoint(resume_from)
        param_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
        model.load_state_arrays(param_arrays)
        opt.load_state_arrays(names, arrays, meta["opt_t"])
        start_epoch = int(meta["epoch"]) + 1
        global_step = int(meta["step"])

    log_rows = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
            order = rng.permutation(len(dataset))
            for b0 in range(0, len(dataset), cfg.batch_size):
                idx = order[b0:b0 + cfg.batch_size]
                batch, target = make_batch([dataset[i] for i in idx],
                                           model.config.modalities,
                                           rng=rng, crop_size=cfg.crop_size)
                lr = poly_lr(global_step, total_steps, cfg)
                try:
                    out = model(**batch)
                    loss, terms = supervision_loss(out["logits"], target)
                    grads = gradients(loss, opt.params)
                except NumericsError:
                    # the op layer already refused a non-finite forward value
                    raise TrainingDiverged(global_step, lr, float("nan")) from None
                gnorm = math.sqrt(sum(float((g * g).sum()) for g in grads))
                if not (np.isfinite(loss.data).all() and math.isfinite(gnorm)):
                    raise TrainingDiverged(global_step, lr, gnorm)
                opt.step(grads, lr)
                row = {
                    "step": global_step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": float(loss.data),
                    "level_losses": [float(t.data) for t in terms],
                }
                log_rows.append(row)
                if log_file:
                    log_file.write(json.dumps(row) + "\n")
                global_step += 1
            if log_file:
                log_file.flush()
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
                model.save_checkpoint(
                    os.path.join(out_dir, f"epoch_{epoch:04d}.mmck"),
                    step=global_step, epoch=epoch,
                    extra_tensors=opt.state_arrays(names),
                    extra_meta={"opt_t": opt.t, "train_config": cfg.to_dict()},
                )
            if on_epoch_end:
                on_epoch_end(epoch, model, log_rows)
    finally:
        if log_file:
            log_file.close()
    return log_rows


# -- ablation harness -------------------------------------------------------------


def cue_variants(base):
    """Input-modality ablation: RGB only, +depth, +flow, everything."""
    rows = (("rgb", ("rgb",)), ("rgb+depth", ("rgb", "depth")),
            ("rgb+flow", ("rgb", "flow")), ("all", ("rgb", "depth", "flow")))
    return {name: _override(base, modalities=mods) for name, mods in rows}


def module_variants(base):
    """Correspondence extractor and refinement decoder on/off grid."""
    return {
        "neither": _override(base, use_correspondence=False, use_refine_decoder=False),
        "correspondence_only": _override(base, use_refine_decoder=False),
        "refine_only": _override(base, use_correspondence=False),
        "full": _override(base),
    }


def scan_variants(base):
    """Scanning direction ablation inside the correspondence extractor."""
    return {name: _override(base, scan_directions=name)
            for name in ("horizontal", "vertical", "all")}


def _override(base, **kw):
    d = base.to_dict()
    d.update(kw)
    return ModelConfig.from_dict(d)


def ablate(variants, train_set, test_set, cfg, out_dir=None, batch_size=8):
    """Train every variant under one identical recipe, evaluate on one set.

    ``variants`` maps row name to ModelConfig. Returns {"rows": {...},
    "table": str}; rows are JSON-ready metric dicts in insertion order.
    """
    from . import metrics
    results = {}
    for name, mc in variants.items():
        model = MirrorMamba(mc)
        mods = mc.modalities
        usable_train = [s for s in train_set if _has_modalities(s, mods)]
        usable_test = [s for s in test_set if _has_modalities(s, mods)]
        log_path = os.path.join(out_dir, f"{name}.log.jsonl") if out_dir else None
        train(model, usable_train, cfg, log_path=log_path)
        results[name] = evaluate_model(model, usable_test, batch_size=batch_size)
    table = metrics.format_table(results)
    rows = {name: res.to_dict() for name, res in results.items()}
    for r in rows.values():
        r.pop("per_sample")
    return {"rows": rows, "table": table}


def _has_modalities(sample, mods):
    a = _sample_arrays(sample)
    return all(m in a for m in mods)
