"""Segmentation metrics: IoU, F-beta (beta^2 = 0.3), MAE, pixel accuracy.

Predictions are probability maps; IoU, F-beta and accuracy binarize them
first (fixed 0.5 by default, or 2x the map's mean with
``adaptive=True``), MAE never thresholds. Dataset-level numbers are
unweighted means of per-sample values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_BETA_SQ = 0.3


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction")
    if ((gt != 0) & (gt != 1)).any():
        raise ValueError("gt mask must be binary")
    return pred, gt


def binarize(pred, thresh=0.5, adaptive=False):
    pred = np.asarray(pred, dtype=np.float64)
    if adaptive:
        thresh = 2.0 * float(pred.mean())
    return pred > thresh


def iou(pred, gt, thresh=0.5, adaptive=False):
    pred, gt = _check_pair(pred, gt)
    p = binarize(pred, thresh, adaptive)
    g = gt > 0.5
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0  # both empty: perfect agreement by convention
    return float(np.logical_and(p, g).sum() / union)


def f_beta(pred, gt, beta_sq=DEFAULT_BETA_SQ, thresh=0.5, adaptive=False):
    pred, gt = _check_pair(pred, gt)
    p = binarize(pred, thresh, adaptive)
    g = gt > 0.5
    tp = float(np.logical_and(p, g).sum())
    pred_pos = float(p.sum())
    gt_pos = float(g.sum())
    if pred_pos == 0 or gt_pos == 0 or tp == 0:
        return 0.0
    precision = tp / pred_pos
    recall = tp / gt_pos
    return float((1 + beta_sq) * precision * recall / (beta_sq * precision + recall))


def mae(pred, gt):
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def accuracy(pred, gt, thresh=0.5, adaptive=False):
    pred, gt = _check_pair(pred, gt)
    p = binarize(pred, thresh, adaptive)
    g = gt > 0.5
    return float((p == g).mean())


@dataclass
class EvalResult:
    iou: float
    f_beta: float
    mae: float
    accuracy: float
    per_sample: list = field(default_factory=list)

    def to_dict(self):
        return {
            "iou": self.iou,
            "f_beta": self.f_beta,
            "mae": self.mae,
            "accuracy": self.accuracy,
            "num_samples": len(self.per_sample),
            "per_sample": self.per_sample,
        }


def evaluate(preds, gts, thresh=0.5, adaptive=False, beta_sq=DEFAULT_BETA_SQ):
    """Mean metrics over aligned lists of probability maps and masks."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} masks")
    if not preds:
        raise ValueError("nothing to evaluate")
    rows = []
    for p, g in zip(preds, gts):
        rows.append({
            "iou": iou(p, g, thresh, adaptive),
            "f_beta": f_beta(p, g, beta_sq, thresh, adaptive),
            "mae": mae(p, g),
            "accuracy": accuracy(p, g, thresh, adaptive),
        })
    agg = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return EvalResult(iou=agg["iou"], f_beta=agg["f_beta"], mae=agg["mae"],
                      accuracy=agg["accuracy"], per_sample=rows)


def format_table(results):
    """Aligned text table from {row_name: EvalResult}."""
    headers = ("", "IoU^", "F_beta^", "MAE v", "Acc^")
    rows = [headers]
    for name, res in results.items():
        rows.append((name, f"{res.iou:.4f}", f"{res.f_beta:.4f}",
                     f"{res.mae:.4f}", f"{res.accuracy:.4f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
