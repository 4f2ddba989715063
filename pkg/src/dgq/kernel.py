"""Reference integer inference path: int8 x int8 GEMM, int32 accumulation, float epilogue.

``O = (s_x[r] * s1[c]) * (X_s8 @ W_s8)[r, c]`` with the per-row (dynamic) or
per-tensor (static) activation scale ``s_x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layer import DgqLayer, dequantize_to_s8
from .quant import SCALE_EPS

INT8_MAX = 127
INT32_MAX = 2**31 - 1


@dataclass
class GemmResult:
    out: np.ndarray  # float32 (b, o)
    acc_i32: np.ndarray  # int32 (b, o)
    max_abs_acc: int
    # sum_i |x_i| |w_i| per output, bounds every partial sum of the accumulation
    max_abs_partial_bound: int

    @property
    def int32_safe(self) -> bool:
        return self.max_abs_partial_bound <= INT32_MAX


def quantize_act(X, mode: str, act_scale: float | None = None, k=None):
    """Symmetric int8 activation codes after dividing by the smoothing vector.

    Returns ``(codes int8, row_scales float32 (b,))``. Static mode broadcasts the
    single calibrated scale to every row.
    """
    X = np.asarray(X, dtype=np.float64)
    if k is not None:
        X = X / np.asarray(k, dtype=np.float32).astype(np.float64)[None, :]
    if mode == "dynamic":
        s = np.abs(X).max(axis=1, initial=0.0) / INT8_MAX
        s = np.maximum(s, SCALE_EPS).astype(np.float32)
    elif mode == "static":
        if act_scale is None:
            raise ValueError("static activation quantization needs act_scale")
        s = np.full(X.shape[0], act_scale, dtype=np.float32)
    else:
        raise ValueError(f"unknown activation mode {mode!r}")
    q = np.clip(np.rint(X / s.astype(np.float64)[:, None]), -INT8_MAX, INT8_MAX)
    return q.astype(np.int8), s


def fake_quant_act(X, mode: str, act_scale: float | None = None, k=None) -> np.ndarray:
    """Dequantized activations (float64) as seen by the kernel; ``mode="none"`` only smooths."""
    if mode == "none":
        X = np.asarray(X, dtype=np.float64)
        if k is None:
            return X
        return X / np.asarray(k, dtype=np.float32).astype(np.float64)[None, :]
    q, s = quantize_act(X, mode, act_scale, k)
    return q.astype(np.float64) * s.astype(np.float64)[:, None]


def static_act_scale(X, k=None) -> float:
    """Per-tensor scale covering the (smoothed) calibration activations without clipping."""
    X = np.asarray(X, dtype=np.float64)
    if k is not None:
        X = X / np.asarray(k, dtype=np.float32).astype(np.float64)[None, :]
    return float(np.float32(max(np.abs(X).max(initial=0.0) / INT8_MAX, SCALE_EPS)))


def quantize_activations(X, layer: DgqLayer):
    return quantize_act(X, layer.mode, layer.act_scale, layer.k)


F32_EXACT = 2**24


def int8_gemm(xq, wq, method: str = "blocked") -> np.ndarray:
    """Exact integer product with int32 accumulators.

    ``method="int32"`` is a plain integer matmul. ``"blocked"`` (default, much
    faster) splits the reduction axis into chunks short enough that every
    partial sum stays below 2**24 in magnitude, so float32 BLAS computes each
    chunk exactly; the chunk results are summed in int32.
    """
    xq = np.asarray(xq)
    wq = np.asarray(wq)
    if xq.shape[1] != wq.shape[0]:
        raise ValueError(f"inner dimensions differ: {xq.shape} @ {wq.shape}")
    h = xq.shape[1]
    xm = int(np.abs(xq.astype(np.int32)).max(initial=0))
    wm = int(np.abs(wq.astype(np.int32)).max(initial=0))
    if h * xm * wm > INT32_MAX:
        raise OverflowError("reduction length too large for int32 accumulation")
    if method == "int32":
        return np.matmul(xq.astype(np.int32), wq.astype(np.int32))
    if method != "blocked":
        raise ValueError(f"unknown method {method!r}")
    step = max(1, (F32_EXACT - 1) // max(1, xm * wm))
    xf = xq.astype(np.float32)
    wf = wq.astype(np.float32)
    acc = np.zeros((xq.shape[0], wq.shape[1]), dtype=np.int32)
    for k in range(0, h, step):
        acc += (xf[:, k : k + step] @ wf[k : k + step]).astype(np.int32)
    return acc


def epilogue(acc, row_scales, s1, bias=None, fp16: bool = False) -> np.ndarray:
    """``out[r, c] = row_scales[r] * s1[c] * acc[r, c]`` in float32 (or float16 rounding)."""
    dt = np.float16 if fp16 else np.float32
    scale = np.asarray(row_scales, dtype=dt)[:, None] * np.asarray(s1, dtype=dt)[None, :]
    out = (scale.astype(np.float32) * np.asarray(acc).astype(np.float32)).astype(dt)
    if bias is not None:
        out = out + np.asarray(bias, dtype=dt)[None, :]
    return out.astype(np.float32)


def dgq_gemm(xq, row_scales, layer: DgqLayer, bias=None, fp16: bool = False) -> GemmResult:
    """Integer GEMM against the layer's int8 weights, given quantized activations."""
    wq = dequantize_to_s8(layer)
    acc = int8_gemm(xq, wq)
    bound = np.abs(np.asarray(xq, dtype=np.float64)) @ np.abs(wq.astype(np.float64))
    return GemmResult(
        out=epilogue(acc, row_scales, layer.s1, bias, fp16),
        acc_i32=acc,
        max_abs_acc=int(np.abs(acc.astype(np.int64)).max(initial=0)),
        max_abs_partial_bound=int(bound.max(initial=0)),
    )


def run_gemm(X, layer: DgqLayer, bias=None, fp16: bool = False) -> GemmResult:
    """Full deployment path: smooth + quantize activations, int8 GEMM, epilogue."""
    xq, s = quantize_activations(X, layer)
    return dgq_gemm(xq, s, layer, bias, fp16)


def segmented_gemm(xq, row_scales, codes, zero_points, group_scales, group_size: int) -> np.ndarray:
    """Group-wise baseline: one integer GEMM per input-channel segment, float accumulation."""
    xq = np.asarray(xq)
    codes = np.asarray(codes, dtype=np.int32)
    zp = np.asarray(zero_points, dtype=np.int32)
    gs = np.asarray(group_scales, dtype=np.float32)
    b, h = xq.shape
    if h % group_size or codes.shape[0] != h:
        raise ValueError("group size must divide the reduction dimension")
    rs = np.asarray(row_scales, dtype=np.float32)
    out = np.zeros((b, codes.shape[1]), dtype=np.float32)
    for k in range(h // group_size):
        sl = slice(k * group_size, (k + 1) * group_size)
        acc = int8_gemm(xq[:, sl], codes[sl] - zp[k][None, :])
        out += (rs[:, None] * gs[k][None, :]) * acc.astype(np.float32)
    return out


def segmented_gemm_reference(xq, row_scales, layer: DgqLayer, group_scales=None) -> np.ndarray:
    """Segmented path over a layer's codes; group scales default to ``s1 * S2`` in float."""
    if group_scales is None:
        group_scales = layer.s1[None, :].astype(np.float32) * layer.S2.astype(np.float32)
    return segmented_gemm(xq, row_scales, layer.codes, layer.ZP, group_scales, layer.g)
