"""Criterion-6 calibration: paper recipe on 200/50 all-cue scenes at 96x96."""
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mirrormamba import synth
from mirrormamba.backbone import BackboneConfig
from mirrormamba.model import MirrorMamba, ModelConfig
from mirrormamba.train import TrainConfig, evaluate_model, train

t0 = time.time()
data_dir = "/tmp/c6_data"
if not os.path.exists(os.path.join(data_dir, "manifest.json")):
    synth.make_dataset(200, 50, {"all": 1.0}, seed=2024, out_dir=data_dir,
                       height=96, width=96, workers=8)
print(f"[{time.time()-t0:6.1f}s] dataset ready", flush=True)

tr = synth.load_split(data_dir, "train")
te = synth.load_split(data_dir, "test")

mc = ModelConfig(mode="video", backbone=BackboneConfig(base_channels=16),
                 d_state=16, seed=0)
tc = TrainConfig(epochs=40, batch_size=8, seed=0, crop_size=96)
model = MirrorMamba(mc)


def report(epoch, model, rows):
    if epoch % 4 == 3 or epoch == tc.epochs - 1:
        res = evaluate_model(model, te)
        print(f"[{time.time()-t0:6.1f}s] epoch {epoch:2d} "
              f"loss={rows[-1]['loss']:.4f} test IoU={res.iou:.4f} "
              f"F={res.f_beta:.4f} MAE={res.mae:.4f}", flush=True)


rows = train(model, tr, tc, on_epoch_end=report)
res = evaluate_model(model, te)
print(json.dumps({"final_iou": res.iou, "f_beta": res.f_beta, "mae": res.mae,
                  "accuracy": res.accuracy, "minutes": (time.time()-t0)/60}))
