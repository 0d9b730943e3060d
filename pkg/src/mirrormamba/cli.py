"""Command line interface: one binary, seven subcommands.

    gen        write a synthetic dataset (+ manifest) to a directory
    train      optimize a model on a generated dataset
    eval       score a checkpoint on a dataset split
    predict    export probability and binary masks as PGM files
    gradcheck  finite-difference report over the op registry and a tiny model
    bench      sequence-length scaling benchmark of the scan kernel
    ablate     train and compare ablation variants

Every command is a pure function of its flags plus seeds. The env var
MIRRORMAMBA_THREADS caps worker threads for parallel sample work.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


def thread_cap(default=None):
    raw = os.environ.get("MIRRORMAMBA_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"MIRRORMAMBA_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise ValueError("MIRRORMAMBA_THREADS must be >= 1")
        return n
    return default if default is not None else (os.cpu_count() or 1)


def _parse_cue_mix(text):
    mix = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            name, w = part.split("=", 1)
            mix[name.strip()] = float(w)
        else:
            mix[part] = 1.0
    if not mix:
        raise ValueError("empty cue mix")
    return mix


def _build_parser():
    p = argparse.ArgumentParser(
        prog="mirrormamba",
        description="Mirror detection in images and videos via selective-scan "
                    "state-space models.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--n-train", type=int, required=True, help="training scenes")
    g.add_argument("--n-test", type=int, required=True, help="test scenes")
    g.add_argument("--cues", default="all",
                   help="cue mix, e.g. 'all' or 'depth=1,flow=2' or 'depth+flow'")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--height", type=int, default=96, help="canvas height (multiple of 32)")
    g.add_argument("--width", type=int, default=96, help="canvas width (multiple of 32)")
    g.add_argument("--sigma", type=float, default=0.0, help="additive noise level")
    g.add_argument("--frames", type=int, default=1, help="frames per scene (1 = stills)")

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True, help="dataset directory from gen")
    t.add_argument("--out", required=True, help="directory for checkpoints and log")
    t.add_argument("--config", help="path to a train.json overriding the recipe")
    t.add_argument("--modalities", default="rgb,depth,flow",
                   help="comma list from rgb,depth,flow")
    t.add_argument("--base-channels", type=int, default=16, help="first-stage width")
    t.add_argument("--d-state", type=int, default=16, help="state size per channel")
    t.add_argument("--epochs", type=int, default=40, help="training epochs")
    t.add_argument("--batch-size", type=int, default=8, help="samples per step")
    t.add_argument("--lr", type=float, default=6e-5, help="initial learning rate")
    t.add_argument("--seed", type=int, default=0, help="training seed")
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--ckpt", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", default="test", choices=("train", "test"),
                   help="which split to score")
    e.add_argument("--adaptive", action="store_true",
                   help="threshold at 2x mean instead of 0.5")
    e.add_argument("--json-out", help="also write the JSON report here")

    r = sub.add_parser("predict", help="write probability/binary PGM masks")
    r.add_argument("--ckpt", required=True, help="checkpoint file")
    r.add_argument("--data", required=True, help="dataset directory")
    r.add_argument("--split", default="test", choices=("train", "test"),
                   help="which split to predict")
    r.add_argument("--out", required=True, help="output directory for PGMs")
    r.add_argument("--threshold", type=float, default=0.5,
                   help="binarization threshold for the mask files")

    c = sub.add_parser("gradcheck", help="verify gradients of every op")
    c.add_argument("--seeds", type=int, default=3, help="number of seeds")
    c.add_argument("--tol", type=float, default=1e-4, help="relative tolerance")
    c.add_argument("--skip-model", action="store_true",
                   help="ops only, skip the end-to-end model check")

    b = sub.add_parser("bench", help="scan kernel timing vs sequence length")
    b.add_argument("--lengths", default="4096,8192,16384",
                   help="comma-separated sequence lengths")
    b.add_argument("--repeats", type=int, default=5, help="timing repeats per length")
    b.add_argument("--out", help="write CSV here (default stdout)")

    a = sub.add_parser("ablate", help="train and compare ablation variants")
    a.add_argument("--data", required=True, help="dataset directory")
    a.add_argument("--suite", required=True, choices=("cues", "modules", "scans"),
                   help="which ablation family to run")
    a.add_argument("--out", required=True, help="directory for logs and reports")
    a.add_argument("--base-channels", type=int, default=16, help="first-stage width")
    a.add_argument("--d-state", type=int, default=16, help="state size per channel")
    a.add_argument("--epochs", type=int, default=40, help="epochs per variant")
    a.add_argument("--batch-size", type=int, default=8, help="samples per step")
    a.add_argument("--seed", type=int, default=0, help="shared seed for all variants")
    return p


def _cmd_gen(args):
    from . import synth
    manifest = synth.make_dataset(
        args.n_train, args.n_test, _parse_cue_mix(args.cues), args.seed,
        args.out, height=args.height, width=args.width, sigma=args.sigma,
        frames=args.frames, workers=thread_cap())
    print(f"wrote {len(manifest['samples'])} samples to {args.out}")
    return 0


def _model_config(args):
    from .backbone import BackboneConfig
    from .model import ModelConfig
    mods = tuple(m.strip() for m in args.modalities.split(",") if m.strip())
    return ModelConfig(modalities=mods,
                       backbone=BackboneConfig(base_channels=args.base_channels),
                       d_state=args.d_state, seed=args.seed)


def _cmd_train(args):
    from . import synth
    from .model import MirrorMamba
    from .train import TrainConfig, train
    if args.config:
        cfg = TrainConfig.from_json(args.config)
    else:
        manifest = synth.read_manifest(args.data)
        cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size,
                          epochs=args.epochs, seed=args.seed,
                          crop_size=min(manifest["canvas"]) // 32 * 32)
    model = MirrorMamba(_model_config(args))
    data = synth.load_split(args.data, "train")
    os.makedirs(args.out, exist_ok=True)
    # mirror the exact recipe into the run directory for reproducibility
    with open(os.path.join(args.out, "train.json"), "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    rows = train(model, data, cfg, out_dir=args.out,
                 log_path=os.path.join(args.out, "log.jsonl"),
                 resume_from=args.resume)
    print(f"trained {len(rows)} steps; final loss {rows[-1]['loss']:.4f}; "
          f"checkpoints in {args.out}")
    return 0


def _load_model(ckpt):
    from .model import MirrorMamba
    model, _, meta = MirrorMamba.load_checkpoint(ckpt)
    return model, meta


def _cmd_eval(args):
    from . import metrics, synth
    from .train import evaluate_model
    model, _ = _load_model(args.ckpt)
    samples = synth.load_split(args.data, args.split)
    result = evaluate_model(model, samples, adaptive=args.adaptive)
    report = result.to_dict()
    report.pop("per_sample")
    print(metrics.format_table({args.split: result}))
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def _cmd_predict(args):
    from . import fileio, synth
    from .train import predict_probs
    model, _ = _load_model(args.ckpt)
    samples = synth.load_split(args.data, args.split)
    probs = predict_probs(model, samples)
    os.makedirs(args.out, exist_ok=True)
    for s, prob in zip(samples, probs):
        base = os.path.join(args.out, s["id"])
        fileio.write_pgm_gray(base + "_prob.pgm", prob)
        fileio.write_pgm(base + "_mask.pgm", (prob > args.threshold).astype(np.float32))
    print(f"wrote {2 * len(probs)} PGM files to {args.out}")
    return 0


def _cmd_gradcheck(args):
    from .gradcheck_suite import run_suite
    rows = run_suite(seeds=range(args.seeds), tol=args.tol,
                     include_model=not args.skip_model)
    failed = 0
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        failed += not r["passed"]
        print(f"{status}  {r['name']:24s} max_rel_err={r['max_rel_err']:.3e}")
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 1 if failed else 0


def _cmd_bench(args):
    from .scan import bench_scan
    lengths = tuple(int(x) for x in args.lengths.split(","))
    rep = bench_scan(lengths=lengths, repeats=args.repeats)
    lines = ["length,median_seconds"]
    for L in lengths:
        lines.append(f"{L},{rep['median_seconds'][L]:.6f}")
    csv = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(csv)
    else:
        sys.stdout.write(csv)
    ratios = ", ".join(f"{k}: {v:.2f}" for k, v in rep["doubling_ratios"].items())
    print(f"doubling ratios: {ratios}")
    return 0


def _cmd_ablate(args):
    from . import synth
    from .backbone import BackboneConfig
    from .model import ModelConfig
    from .train import (TrainConfig, ablate, cue_variants, module_variants,
                        scan_variants)
    base = ModelConfig(backbone=BackboneConfig(base_channels=args.base_channels),
                       d_state=args.d_state, seed=args.seed)
    suite = {"cues": cue_variants, "modules": module_variants,
             "scans": scan_variants}[args.suite](base)
    manifest = synth.read_manifest(args.data)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed, crop_size=min(manifest["canvas"]) // 32 * 32)
    tr = synth.load_split(args.data, "train")
    te = synth.load_split(args.data, "test")
    os.makedirs(args.out, exist_ok=True)
    report = ablate(suite, tr, te, cfg, out_dir=args.out)
    print(report["table"])
    with open(os.path.join(args.out, f"{args.suite}.json"), "w", encoding="utf-8") as f:
        json.dump(report["rows"], f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # one-line reason, non-zero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
