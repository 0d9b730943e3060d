"""Calibrate the cue- and module-ablation budgets on the mixed dataset.

Trains seven variant models under one shared recipe on a one-third
depth / correspondence / flow scene mix, then prints the ordering gates
the acceptance suite pins.
"""
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mirrormamba.backbone import BackboneConfig
from mirrormamba.model import MirrorMamba, ModelConfig
from mirrormamba.synth import make_dataset, load_split, read_manifest
from mirrormamba.train import (TrainConfig, cue_variants, evaluate_model,
                               module_variants, train)

DATA = "/tmp/abl_data"
MIX = {"depth": 1, "correspondence": 1, "flow": 1}
SEED = 11


def main():
    t0 = time.time()
    if not os.path.exists(os.path.join(DATA, "manifest.json")):
        make_dataset(120, 48, MIX, seed=2025, out_dir=DATA,
                     height=64, width=64, workers=8)
        print(f"[{time.time()-t0:7.1f}s] dataset built")
    train_set = load_split(DATA, "train")
    test_set = load_split(DATA, "test")

    base = ModelConfig(modalities=("rgb", "depth", "flow"),
                       backbone=BackboneConfig(base_channels=8), d_state=8,
                       seed=0)
    cfg = TrainConfig(lr=2e-3, epochs=80, batch_size=8, seed=SEED, crop_size=64)

    variants = dict(cue_variants(base))
    for name, mc in module_variants(base).items():
        if name != "full":  # full == the all-cue variant
            variants[name] = mc

    results = {}
    subset_results = {}
    for name, mc in variants.items():
        t1 = time.time()
        model = MirrorMamba(mc)
        train(model, train_set, cfg)
        res = evaluate_model(model, test_set)
        results[name] = res
        by_cue = {}
        for cue in ("depth", "correspondence", "flow"):
            subset = [s for s in test_set if s["spec"]["cues"] == [cue]]
            by_cue[cue] = evaluate_model(model, subset).iou
        subset_results[name] = by_cue
        print(f"[{time.time()-t0:7.1f}s] {name:20s} IoU={res.iou:.4f} "
              f"F={res.f_beta:.4f} MAE={res.mae:.4f} "
              f"per-cue={json.dumps({k: round(v, 3) for k, v in by_cue.items()})} "
              f"({time.time()-t1:.0f}s)")

    print("\n-- criterion 7 gates --")
    margin = results["all"].iou - results["rgb"].iou
    print(f"margin all-rgb = {margin:.4f} (need >= 0.10)")
    print(f"flow-only rgb = {subset_results['rgb']['flow']:.4f} (need <= 0.30)")
    print(f"flow-only all = {subset_results['all']['flow']:.4f} (need >= 0.60)")

    print("\n-- criterion 8 gates --")
    for name in ("full", "correspondence_only", "refine_only", "neither"):
        key = "all" if name == "full" else name
        r = results[key]
        print(f"{name:20s} IoU={r.iou:.4f} F={r.f_beta:.4f}")
    full = results["all"]
    ok = (full.iou >= results["correspondence_only"].iou >= results["neither"].iou
          and full.iou >= results["refine_only"].iou >= results["neither"].iou)
    print(f"ordering holds: {ok}")
    print(f"\ntotal {time.time()-t0:.0f}s")


if __name__ == "__main__":
    main()
