"""scikit-learn style facade over the detector.

``MirrorDetector`` takes modality-stacked arrays: X is [N, 3*k, H, W]
with the k active modalities concatenated channelwise in rgb/depth/flow
order, y is [N, H, W] binary masks. ``score`` reports mean IoU.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import metrics, validation
from .backbone import BackboneConfig
from .model import MirrorMamba, ModelConfig
from .train import TrainConfig, predict_probs, train


class MirrorDetector(BaseEstimator):
    def __init__(self, modalities=("rgb", "depth", "flow"), base_channels=16,
                 d_state=16, lr=6e-5, weight_decay=0.01, batch_size=8,
                 epochs=40, threshold=0.5, seed=0):
        self.modalities = modalities
        self.base_channels = base_channels
        self.d_state = d_state
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.threshold = threshold
        self.seed = seed

    def _samples(self, X, y=None):
        mods = validation.check_modalities(self.modalities)
        X = validation.check_stack(X, len(mods))
        stacks = validation.split_stack(X, mods)
        masks = validation.check_masks(y, X) if y is not None else None
        samples = []
        for i in range(X.shape[0]):
            s = {m: stacks[m][i] for m in mods}
            if masks is not None:
                s["mask"] = masks[i]
            else:
                s["mask"] = np.zeros(X.shape[2:], dtype=np.float32)
            samples.append(s)
        return mods, samples, X.shape[2]

    def fit(self, X, y):
        mods, samples, size = self._samples(X, y)
        config = ModelConfig(
            modalities=mods,
            backbone=BackboneConfig(base_channels=self.base_channels),
            d_state=self.d_state,
            seed=self.seed,
        )
        self.model_ = MirrorMamba(config)
        self.train_config_ = TrainConfig(
            lr=self.lr, weight_decay=self.weight_decay,
            batch_size=self.batch_size, epochs=self.epochs,
            seed=self.seed, crop_size=size,
        )
        self.log_ = train(self.model_, samples, self.train_config_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def predict_proba(self, X):
        self._check_fitted()
        _, samples, _ = self._samples(X)
        probs = predict_probs(self.model_, samples, batch_size=self.batch_size)
        return np.stack(probs)

    def predict(self, X):
        return (self.predict_proba(X) > self.threshold).astype(np.float32)

    def score(self, X, y):
        """Mean IoU over samples."""
        probs = self.predict_proba(X)
        y = validation.check_masks(y, validation.check_stack(
            X, len(validation.check_modalities(self.modalities))))
        return float(np.mean([metrics.iou(p, g, thresh=self.threshold)
                              for p, g in zip(probs, y)]))
