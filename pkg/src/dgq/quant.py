"""Uniform integer quantization at tensor, row, column and group granularity.

Asymmetric (unsigned) quantization::

    s  = alpha * (max(x) - min(x)) / (2**N - 1)
    ZP = -round(alpha * min(x) / s)            clamped to [0, 2**N - 1]

with ``min(x)``/``max(x)`` taken over the slice extended to include 0
(a no-op for slices that straddle zero).
    q  = clamp(round(x / s) + ZP, 0, 2**N - 1)
    x_hat = (q - ZP) * s

Symmetric (signed) quantization uses ``s = alpha * max|x| / (2**(N-1) - 1)``,
``ZP = 0`` and codes in ``[-(2**(N-1) - 1), 2**(N-1) - 1]``.

Rounding is round-half-to-even (``np.rint``) everywhere. Scales are stored as
float32; the arithmetic producing codes runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCALE_EPS = 1e-8


@dataclass(frozen=True)
class Granularity:
    """How a 2-D tensor is partitioned into independently quantized slices.

    ``kind`` is one of ``"tensor"``, ``"row"``, ``"column"``, ``"group"``.
    Groups run along axis 0 (the reduction axis of an ``h x o`` weight), so a
    per-group parameter array has shape ``(h // group_size, cols)``.
    """

    kind: str
    group_size: int | None = None

    def __post_init__(self):
        if self.kind not in ("tensor", "row", "column", "group"):
            raise ValueError(f"unknown granularity {self.kind!r}")
        if self.kind == "group" and (self.group_size is None or self.group_size < 1):
            raise ValueError("per-group granularity needs group_size >= 1")

    def param_shape(self, shape: tuple[int, int]) -> tuple[int, int]:
        rows, cols = shape
        if self.kind == "tensor":
            return (1, 1)
        if self.kind == "row":
            return (rows, 1)
        if self.kind == "column":
            return (1, cols)
        if rows % self.group_size:
            raise ValueError(f"group size {self.group_size} does not divide {rows}")
        return (rows // self.group_size, cols)

    def expand(self, params: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        """Broadcast a parameter array to the full tensor shape."""
        params = np.asarray(params)
        if self.kind == "group":
            params = np.repeat(params, self.group_size, axis=0)
        return np.broadcast_to(params, shape)

    def reduce(self, x: np.ndarray, fn) -> np.ndarray:
        """Apply a reduction ``fn(array, axis)`` per slice, keeping the param shape."""
        if self.kind == "tensor":
            return fn(x, axis=None).reshape(1, 1)
        if self.kind == "row":
            return fn(x, axis=1).reshape(-1, 1)
        if self.kind == "column":
            return fn(x, axis=0).reshape(1, -1)
        rows, cols = x.shape
        n_g, _ = self.param_shape(x.shape)
        return fn(x.reshape(n_g, self.group_size, cols), axis=1)


PER_TENSOR = Granularity("tensor")
PER_ROW = Granularity("row")
PER_COLUMN = Granularity("column")


def per_group(group_size: int) -> Granularity:
    return Granularity("group", group_size)


@dataclass(frozen=True)
class QuantParams:
    scales: np.ndarray  # float32, shaped by granularity
    zero_points: np.ndarray  # int32, same shape; all zero when symmetric
    n_bits: int
    signed: bool
    alpha: float
    granularity: Granularity

    @property
    def qmin(self) -> int:
        return -(2 ** (self.n_bits - 1) - 1) if self.signed else 0

    @property
    def qmax(self) -> int:
        return 2 ** (self.n_bits - 1) - 1 if self.signed else 2**self.n_bits - 1


def to_fp16(x):
    """Round values to the nearest float16, returned as float32."""
    return np.asarray(x, dtype=np.float32).astype(np.float16).astype(np.float32)


def compute_params(
    x,
    gran: Granularity,
    n_bits: int,
    symmetric: bool,
    alpha: float = 1.0,
) -> QuantParams:
    x = np.asarray(x, dtype=np.float64)
    if not 2 <= n_bits <= 8:
        raise ValueError(f"n_bits must be in [2, 8], got {n_bits}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if symmetric:
        amax = gran.reduce(np.abs(x), np.max)
        scales = alpha * amax / (2 ** (n_bits - 1) - 1)
        scales = np.maximum(scales, SCALE_EPS).astype(np.float32)
        zps = np.zeros(scales.shape, dtype=np.int32)
    else:
        qmax = 2**n_bits - 1
        # the range always covers 0, so one-signed slices keep ZP in [0, qmax]
        lo = np.minimum(gran.reduce(x, np.min), 0.0)
        hi = np.maximum(gran.reduce(x, np.max), 0.0)
        scales = np.maximum(alpha * (hi - lo) / qmax, SCALE_EPS).astype(np.float32)
        zps = -np.rint(alpha * lo / scales.astype(np.float64))
        zps = np.clip(zps, 0, qmax).astype(np.int32)
    return QuantParams(scales, zps, n_bits, symmetric, alpha, gran)


def quantize(x, p: QuantParams) -> np.ndarray:
    """Integer codes (int32) for ``x`` under ``p``."""
    x = np.asarray(x, dtype=np.float64)
    s = p.granularity.expand(p.scales, x.shape).astype(np.float64)
    zp = p.granularity.expand(p.zero_points, x.shape)
    q = np.rint(x / s) + zp
    return np.clip(q, p.qmin, p.qmax).astype(np.int32)


def dequantize(q, p: QuantParams) -> np.ndarray:
    """Float32 reconstruction ``(q - ZP) * s``."""
    q = np.asarray(q)
    s = p.granularity.expand(p.scales, q.shape)
    zp = p.granularity.expand(p.zero_points, q.shape)
    return ((q.astype(np.int32) - zp).astype(np.float32) * s).astype(np.float32)


def fake_quantize(x, gran: Granularity, n_bits: int, symmetric: bool, alpha: float = 1.0):
    """Quantize then dequantize; returns ``(x_hat, params)``."""
    p = compute_params(x, gran, n_bits, symmetric, alpha)
    return dequantize(quantize(x, p), p), p
