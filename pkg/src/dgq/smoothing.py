"""Percentile-clipping smoothing of activation outlier channels.

Each input channel ``j`` gets ``k_j = max(1, z_j / t)`` where ``z_j`` is the
channel's largest calibration magnitude and ``t`` is the smallest value in the
top ``percentile`` fraction of ``z``. Activations are divided by ``k`` and the
matching weight rows multiplied by it, so ``X W`` is unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

DEFAULT_PERCENTILE = 0.005


@dataclass(frozen=True)
class SmoothScale:
    k: np.ndarray  # float32, length h
    threshold: float
    percentile: float = DEFAULT_PERCENTILE

    @classmethod
    def identity(cls, h: int) -> "SmoothScale":
        return cls(np.ones(h, dtype=np.float32), float("nan"), float("nan"))


def channel_maxima(calib: Iterable) -> np.ndarray:
    """Per-column max |x| over every calibration batch (each ``b x h``)."""
    z = None
    for x in calib:
        m = np.abs(np.asarray(x, dtype=np.float32)).max(axis=0, initial=0.0)
        if z is not None and m.shape != z.shape:
            raise ValueError(f"calibration width mismatch: {m.shape[0]} vs {z.shape[0]}")
        z = m if z is None else np.maximum(z, m)
    if z is None:
        raise ValueError("empty calibration set")
    return z.astype(np.float32)


def threshold_rank(h: int, percentile: float) -> int:
    # guard against 0.005 * 1000 landing a hair above 5
    return max(1, math.ceil(round(percentile * h, 9)))


def compute_smooth(z, percentile: float = DEFAULT_PERCENTILE) -> SmoothScale:
    z = np.asarray(z, dtype=np.float32).reshape(-1)
    if z.size < 1:
        raise ValueError("need at least one channel")
    if not 0 < percentile < 1:
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    r = threshold_rank(z.size, percentile)
    threshold = float(np.sort(z)[::-1][r - 1])
    if not threshold > 0:
        raise ValueError("smoothing threshold is zero; calibration activations are all zero")
    k = np.maximum(1.0, z.astype(np.float64) / threshold).astype(np.float32)
    return SmoothScale(k, threshold, percentile)


def apply_smooth(X, W, s: SmoothScale):
    """Return ``(X / k, k * W)`` (column-wise on X, row-wise on W).

    Arithmetic follows the input dtype, so float64 inputs keep the product
    identity to rounding noise.
    """
    X = np.asarray(X)
    W = np.asarray(W)
    if X.shape[1] != s.k.size or W.shape[0] != s.k.size:
        raise ValueError("smoothing vector length must match X columns and W rows")
    dt = np.result_type(X.dtype, W.dtype, np.float32)
    k = s.k.astype(dt)
    return X.astype(dt) / k[None, :], W.astype(dt) * k[:, None]
