"""Train one ablation variant at a candidate train seed, report gate numbers.

Usage: probe_seed.py SEED VARIANT
VARIANT in {all, rgb, refine_only, correspondence_only, neither}.
Reads the mixed-thirds dataset from /tmp/abl_data.
"""
import sys
import time

from mirrormamba import synth
from mirrormamba.model import MirrorMamba, ModelConfig
from mirrormamba.backbone import BackboneConfig
from mirrormamba.train import (TrainConfig, train, evaluate_model,
                               cue_variants, module_variants)

seed = int(sys.argv[1])
name = sys.argv[2]

train_set = synth.load_split("/tmp/abl_data", "train")
test_set = synth.load_split("/tmp/abl_data", "test")
flow_scenes = [s for s in test_set if s["spec"]["cues"] == ["flow"]]

base = ModelConfig(modalities=("rgb", "depth", "flow"),
                   backbone=BackboneConfig(base_channels=8), d_state=8, seed=0)
variants = dict(cue_variants(base))
variants.update(module_variants(base))
mc = variants[name]

cfg = TrainConfig(lr=2e-3, epochs=80, batch_size=8, seed=seed, crop_size=64)
t0 = time.time()
model = MirrorMamba(mc)
train(model, train_set, cfg)
overall = evaluate_model(model, test_set)
flow = evaluate_model(model, flow_scenes)
print(f"seed={seed} {name:20s} IoU={overall.iou:.4f} F={overall.f_beta:.4f} "
      f"flowIoU={flow.iou:.4f} ({time.time() - t0:.0f}s)", flush=True)
