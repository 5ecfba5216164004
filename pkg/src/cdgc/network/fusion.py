"""Score-level fusion of per-stream class probabilities."""

from __future__ import annotations

import numpy as np

from cdgc.errors import DimensionError


def fuse_scores(score_sets, weights=None) -> np.ndarray:
    """Weighted average of equally shaped ``(N, num_classes)`` score matrices.

    ``weights`` default to equal; they must be nonnegative with a positive
    sum. A single set with positive weight is returned unchanged (bitwise).
    """
    sets = [np.asarray(s, dtype=np.float64) for s in score_sets]
    if not sets:
        raise ValueError("need at least one score set")
    shape = sets[0].shape
    if len(shape) != 2:
        raise DimensionError(f"score sets must be (N, classes) matrices, got shape {shape}")
    for k, s in enumerate(sets[1:], start=1):
        if s.shape != shape:
            raise DimensionError(f"score set {k} has shape {s.shape}, expected {shape}")
    w = np.ones(len(sets)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(sets),):
        raise ValueError(f"expected {len(sets)} weights, got {w.shape}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    out = None
    for wk, s in zip(w, sets):
        if wk == 0:
            continue
        term = s * (wk / total)
        out = term if out is None else out + term
    return out


def fused_prediction(score_sets, weights=None) -> np.ndarray:
    return fuse_scores(score_sets, weights).argmax(axis=1)
