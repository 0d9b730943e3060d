"""Array validation for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .model import MODALITIES


def check_modalities(modalities):
    mods = tuple(m for m in MODALITIES if m in tuple(modalities))
    if len(mods) != len(tuple(modalities)) or not mods:
        raise ValueError(f"modalities must be a non-empty subset of {MODALITIES}, "
                         f"got {tuple(modalities)!r}")
    return mods


def check_stack(X, n_modalities, name="X"):
    """Validate [N, 3*k, H, W] stacked-modality input; returns float32 array."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"{name} must be 4-dimensional [N, 3*k, H, W], got {X.shape}")
    n, c, h, w = X.shape
    if n == 0:
        raise ValueError(f"{name} is empty")
    if c != 3 * n_modalities:
        raise ValueError(f"{name} has {c} channels; expected 3*{n_modalities} "
                         f"(three per modality, concatenated in rgb/depth/flow order)")
    if h % 32 or w % 32 or h == 0 or w == 0:
        raise ValueError(f"{name} spatial dims {h}x{w} must be positive multiples of 32")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X.astype(np.float32, copy=False)


def check_masks(y, X, name="y"):
    """Validate [N, H, W] binary masks aligned with X."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ValueError(f"{name} must be [N, H, W], got {y.shape}")
    if y.shape[0] != X.shape[0] or y.shape[1:] != X.shape[2:]:
        raise ValueError(f"{name} shape {y.shape} does not align with X {X.shape}")
    vals = np.unique(y)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{name} must be binary 0/1 masks")
    return y.astype(np.float32, copy=False)


def split_stack(X, modalities):
    """[N, 3*k, H, W] -> {modality: [N, 3, H, W]} in canonical order."""
    return {m: X[:, 3 * i:3 * (i + 1)] for i, m in enumerate(modalities)}
