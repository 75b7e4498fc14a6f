"""Dense-vector and order-statistics helpers shared by every aggregator.

Update vectors are plain 1-D ``float64`` numpy arrays.  Non-finite values are
rejected at construction time (:func:`as_update`) instead of being allowed to
poison medians and means further down.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def as_update(values) -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float64 vector of length >= 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise ValueError("update vector must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ValueError("update vector contains non-finite entries")
    return arr


def stack_updates(vectors: Sequence) -> np.ndarray:
    """Stack vectors into an ``(n, d)`` matrix, checking equal length."""
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    rows = [as_update(v) for v in vectors]
    d = rows[0].size
    for k, r in enumerate(rows):
        if r.size != d:
            raise ValueError(f"dimension mismatch: vector {k} has length {r.size}, expected {d}")
    return np.vstack(rows)


def _pair(a, b):
    a = as_update(a)
    b = as_update(b)
    if a.size != b.size:
        raise ValueError(f"dimension mismatch: {a.size} != {b.size}")
    return a, b


def l1_distance(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sum(np.abs(a - b)))


def l2_norm(a) -> float:
    return float(np.sqrt(np.sum(np.square(as_update(a)))))


def weighted_mean(vectors: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Return ``sum(w_i * v_i) / sum(w_i)``.

    The weights are normalised before the sum so that rescaling every weight
    by the same constant leaves the result unchanged up to rounding.
    """
    mat = stack_updates(vectors)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != mat.shape[0]:
        raise ValueError(f"got {mat.shape[0]} vectors but {w.size} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = float(np.sum(w))
    if total <= 0:
        raise ValueError("weights sum to zero")
    return (w / total) @ mat


def coordinate_median(vectors: Sequence) -> np.ndarray:
    mat = stack_updates(vectors)
    return np.median(mat, axis=0)


def coordinate_trimmed_mean(vectors: Sequence, k: int) -> np.ndarray:
    """Per coordinate, drop the ``k`` largest and ``k`` smallest values and average the rest."""
    mat = stack_updates(vectors)
    n = mat.shape[0]
    if k < 0 or 2 * k >= n:
        raise ValueError(f"cannot trim {k} from each side of {n} values")
    srt = np.sort(mat, axis=0)
    return srt[k:n - k].mean(axis=0)
