"""Finite-difference verification suite covering every differentiable op
and an end-to-end pass through a tiny model.

All checks run in float64: central differences at eps=1e-5 lose too many
digits in float32 to say anything at a 1e-4 relative tolerance.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig
from .model import MirrorMamba, ModelConfig
from .scan import ScanOrder, selective_scan
from .tensor import Tensor, gradcheck
from .train import supervision_loss


def op_cases(seed):
    """(name, op, input arrays) for every differentiable tensor op."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    r = lambda *s: rng.standard_normal(s)
    pos = lambda *s: rng.random(s) + 0.5
    cases = [
        ("add", lambda a, b: T.add(a, b), [r(3, 4), r(3, 4)]),
        ("add_broadcast", lambda a, b: T.add(a, b), [r(3, 4), r(4)]),
        ("neg", T.neg, [r(3, 4)]),
        ("mul", lambda a, b: T.mul(a, b), [r(3, 4), r(3, 4)]),
        ("exp", T.exp, [r(3, 4) * 0.5]),
        ("sigmoid", T.sigmoid, [r(3, 4) * 2]),
        ("silu", T.silu, [r(3, 4) * 2]),
        ("softplus", T.softplus, [r(3, 4) * 2]),
        ("tsum", lambda a: T.tsum(a, axis=1), [r(3, 4, 2)]),
        ("tsum_keepdims", lambda a: T.tsum(a, axis=0, keepdims=True), [r(3, 4)]),
        ("tmean", lambda a: T.tmean(a), [r(3, 4)]),
        ("global_avg_pool", T.global_avg_pool, [r(2, 3, 4, 4)]),
        ("reshape", lambda a: T.reshape(a, (2, 6)), [r(3, 4)]),
        ("permute", lambda a: T.permute(a, (1, 0, 2)), [r(2, 3, 4)]),
        ("flip", lambda a: T.flip(a, axis=2), [r(2, 3, 4)]),
        ("concat", lambda a, b: T.concat([a, b], axis=1), [r(2, 3, 4), r(2, 2, 4)]),
        ("split", lambda a: T.split(a, [2, 3], axis=1)[1], [r(2, 5, 3)]),
        ("permute_index",
         lambda a: T.permute_index(a, np.random.default_rng(seed).permutation(6), axis=1),
         [r(2, 6, 3)]),
        ("linear", lambda x, w, b: T.linear(x, w, b), [r(5, 4), r(3, 4), r(3)]),
        ("layer_norm", lambda x, g, b: T.layer_norm(x, g, b), [r(4, 6), pos(6), r(6)]),
        ("conv2d",
         lambda x, k, b: T.conv2d(x, k, stride=1, padding=1, bias=b),
         [r(2, 3, 5, 5), r(4, 3, 3, 3) * 0.3, r(4)]),
        ("conv2d_stride",
         lambda x, k: T.conv2d(x, k, stride=2, padding=0),
         [r(1, 2, 6, 6), r(3, 2, 2, 2) * 0.3]),
        ("dwconv1d", lambda x, k, b: T.dwconv1d(x, k, b), [r(2, 7, 3), r(3, 3) * 0.5, r(3)]),
        ("bilinear_resize", lambda x: T.bilinear_resize(x, 6, 7), [r(1, 2, 3, 4)]),
        ("bilinear_resize_down", lambda x: T.bilinear_resize(x, 2, 2), [r(1, 2, 5, 5)]),
        ("bce_with_logits",
         lambda z: T.bce_with_logits(z, Tensor(np.random.default_rng(seed).random((3, 4)))),
         [r(3, 4) * 2]),
        ("selective_scan",
         lambda u, d, A, B, C, D: selective_scan(u, T.softplus(d), A, B, C, D),
         [r(2, 6, 3), r(2, 6, 3) * 0.3, -pos(3, 2), r(2, 6, 2) * 0.4,
          r(2, 6, 2) * 0.4, r(3)]),
    ]
    return cases


def run_op_checks(seeds, tol=1e-4, max_coords=6):
    """Gradcheck every op under every seed; returns report rows."""
    rows = []
    for name, op, _ in op_cases(0):
        worst = 0.0
        ok = True
        for seed in seeds:
            for case_name, case_op, arrays in op_cases(seed):
                if case_name != name:
                    continue
                inputs = [Tensor(a, requires_grad=True) for a in arrays]
                rep = gradcheck(case_op, inputs, tol=tol,
                                max_coords_per_input=max_coords, seed=seed)
                worst = max(worst, rep.max_rel_err)
                ok = ok and rep.passed
        rows.append({"name": name, "max_rel_err": worst, "passed": ok})
    return rows


def _tiny_model(seed):
    config = ModelConfig(
        modalities=("rgb", "depth"),
        backbone=BackboneConfig(base_channels=2, stage_depths=(1, 1, 1, 1)),
        d_state=2,
        zero_residual_init=False,  # zero-init branches would hide dead paths
        seed=seed,
    )
    model = MirrorMamba(config)
    for _, p in model.named_parameters():
        p.data = p.data.astype(np.float64)
    return model


def run_model_check(seed, tol=1e-4, params_per_seed=6, coords_per_param=2,
                    eps=1e-5):
    """Central-difference check through the full model at 32x32.

    Samples a few parameter coordinates, compares against gradients of the
    deep-supervision loss. Returns a report row.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    model = _tiny_model(seed)
    rgb = Tensor(rng.random((1, 3, 32, 32)))
    depth = Tensor(rng.random((1, 3, 32, 32)))
    target = Tensor((rng.random((1, 1, 32, 32)) > 0.7).astype(np.float64))

    def loss_value():
        out = model(rgb=rgb, depth=depth)
        return supervision_loss(out["logits"], target)[0]

    params = [p for _, p in model.named_parameters()]
    names = [n for n, _ in model.named_parameters()]
    loss = loss_value()
    grads = T.gradients(loss, params)

    idx = rng.choice(len(params), size=min(params_per_seed, len(params)), replace=False)
    worst = 0.0
    for pi in idx:
        p, g = params[pi], grads[pi]
        flat = p.data.reshape(-1)
        coords = rng.choice(flat.size, size=min(coords_per_param, flat.size),
                            replace=False)
        for ci in coords:
            keep = flat[ci]
            flat[ci] = keep + eps
            up = float(loss_value().data)
            flat[ci] = keep - eps
            down = float(loss_value().data)
            flat[ci] = keep
            num = (up - down) / (2 * eps)
            ana = float(g.reshape(-1)[ci])
            rel = abs(num - ana) / max(1.0, abs(num), abs(ana))
            worst = max(worst, rel)
    return {"name": f"model_e2e(seed={seed})", "max_rel_err": worst,
            "passed": worst < tol, "params_sampled": [names[i] for i in idx]}


def run_suite(seeds=range(20), tol=1e-4, include_model=True):
    rows = run_op_checks(list(seeds), tol=tol)
    if include_model:
        for seed in seeds:
            row = run_model_check(seed, tol=tol)
            row.pop("params_sampled")
            rows.append(row)
    return rows
