"""One-variant probe of the ablation budget: lr epochs variant [C1] [d_state]."""
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mirrormamba.backbone import BackboneConfig
from mirrormamba.model import MirrorMamba, ModelConfig
from mirrormamba.synth import load_split
from mirrormamba.train import TrainConfig, evaluate_model, train

lr = float(sys.argv[1])
epochs = int(sys.argv[2])
variant = sys.argv[3] if len(sys.argv) > 3 else "all"
c1 = int(sys.argv[4]) if len(sys.argv) > 4 else 8
d_state = int(sys.argv[5]) if len(sys.argv) > 5 else 8

train_set = load_split("/tmp/abl_data", "train")
test_set = load_split("/tmp/abl_data", "test")
flow_scenes = [s for s in test_set if s["spec"]["cues"] == ["flow"]]

mods = {"all": ("rgb", "depth", "flow"), "rgb": ("rgb",)}[variant]
mc = ModelConfig(modalities=mods, backbone=BackboneConfig(base_channels=c1),
                 d_state=d_state, seed=0)
cfg = TrainConfig(lr=lr, epochs=epochs, batch_size=8, seed=11, crop_size=64)
model = MirrorMamba(mc)
t0 = time.time()


def report(epoch, model, rows):
    if epoch % 5 == 4 or epoch == cfg.epochs - 1:
        res = evaluate_model(model, test_set)
        fl = evaluate_model(model, flow_scenes)
        print(f"[{time.time()-t0:6.1f}s] epoch {epoch:2d} loss={rows[-1]['loss']:.4f} "
              f"IoU={res.iou:.4f} flow-only={fl.iou:.4f}", flush=True)


train(model, train_set, cfg, on_epoch_end=report)
