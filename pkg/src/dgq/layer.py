"""Dual-grained layer artifact and the ``DGQ1`` file format.

``DGQ1`` layout (little-endian)::

    offset        size              field
    0             4                 magic b"DGQ1"
    4             8                 h   (uint64)
    12            8                 o   (uint64)
    20            8                 g   (uint64)
    28            1                 mode (0 = static, 1 = dynamic)
    29            ceil(h*o/2)       codes, uint4 packed, row-major h x o
    ...           n_g*o             S2, int8, row-major n_g x o
    ...           ceil(n_g*o/2)     ZP, uint4 packed, row-major n_g x o
    ...           4*o               s1, float32
    ...           4*h               k, float32
    ...           4                 act_scale, float32 (NaN when absent)

Nibble order matches ``DGT1``: even flat index in the low nibble. An odd
count is padded with a zero high nibble. Every section offset follows from
the header alone.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .search import S2_MAX, DualParams, clip_interval
from .tensor import pack_nibbles, unpack_nibbles

MAGIC = b"DGQ1"
HEADER = struct.Struct("<4sQQQB")
HEADER_SIZE = HEADER.size  # 29
MODES = ("static", "dynamic")


class LayerValidationError(ValueError):
    """An artifact field violates a layer invariant; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class Int8OverflowError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class DgqLayer:
    h: int
    o: int
    g: int
    codes: np.ndarray  # uint8 (h, o), values 0..15
    S2: np.ndarray  # int8 (n_g, o)
    ZP: np.ndarray  # uint8 (n_g, o), values 0..15
    s1: np.ndarray  # float32 (o,)
    k: np.ndarray  # float32 (h,)
    act_scale: float | None = None
    mode: str = "dynamic"

    @property
    def n_groups(self) -> int:
        return self.h // self.g

    def validate(self) -> "DgqLayer":
        validate_layer(self)
        return self

    def __eq__(self, other):
        if not isinstance(other, DgqLayer):
            return NotImplemented
        return layer_to_bytes(self) == layer_to_bytes(other)


def _pad_pack(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.uint8).reshape(-1)
    if v.size % 2:
        v = np.append(v, np.uint8(0))
    return pack_nibbles(v)


def validate_layer(layer: DgqLayer) -> None:
    h, o, g = layer.h, layer.o, layer.g
    if g < 1 or h % g:
        raise LayerValidationError("g", f"group size {g} must divide h={h}")
    n_g = h // g
    shapes = {
        "codes": (layer.codes, (h, o)),
        "S2": (layer.S2, (n_g, o)),
        "ZP": (layer.ZP, (n_g, o)),
        "s1": (layer.s1, (o,)),
        "k": (layer.k, (h,)),
    }
    for name, (arr, shape) in shapes.items():
        if np.shape(arr) != shape:
            raise LayerValidationError(name, f"shape {np.shape(arr)} != {shape}")
    if layer.mode not in MODES:
        raise LayerValidationError("mode", f"{layer.mode!r} not in {MODES}")
    S2 = np.asarray(layer.S2, dtype=np.int64)
    if S2.size and (S2.min() < 1 or S2.max() > S2_MAX):
        raise LayerValidationError("S2", f"values must lie in [1, {S2_MAX}]")
    ZP = np.asarray(layer.ZP, dtype=np.int64)
    if ZP.size and (ZP.min() < 0 or ZP.max() > 15):
        raise LayerValidationError("ZP", "values must lie in [0, 15]")
    if not np.all(np.asarray(layer.s1) > 0):
        raise LayerValidationError("s1", "channel scales must be positive")
    if not np.all(np.asarray(layer.k) >= 1):
        raise LayerValidationError("k", "smoothing factors must be >= 1")
    if layer.mode == "static":
        a = layer.act_scale
        if a is None or not np.isfinite(a) or a <= 0:
            raise LayerValidationError("act_scale", "static mode needs a positive act_scale")
    codes = np.asarray(layer.codes, dtype=np.int64)
    if codes.size:
        lo, hi = clip_interval(S2, ZP)
        lo = np.repeat(lo, g, axis=0)
        hi = np.repeat(hi, g, axis=0)
        bad = (codes < lo) | (codes > hi)
        if bad.any():
            i, c = map(int, np.argwhere(bad)[0])
            raise LayerValidationError(
                "codes",
                f"{int(bad.sum())} codes outside their clip interval, first at "
                f"[{i}, {c}]: {codes[i, c]} not in [{lo[i, c]}, {hi[i, c]}]",
            )


def pack_layer(
    dp: DualParams,
    codes=None,
    k=None,
    act_scale: float | None = None,
    mode: str = "dynamic",
) -> DgqLayer:
    """Assemble and validate a :class:`DgqLayer` from searched parameters."""
    codes = dp.codes if codes is None else codes
    codes = np.asarray(codes)
    h, o = codes.shape
    k = np.ones(h, np.float32) if k is None else k
    layer = DgqLayer(
        h=h,
        o=o,
        g=dp.group_size,
        codes=codes.astype(np.uint8),
        S2=np.asarray(dp.S2).astype(np.int8),
        ZP=np.asarray(dp.ZP).astype(np.uint8),
        s1=np.asarray(dp.s1, dtype=np.float32).reshape(-1),
        k=np.asarray(k, dtype=np.float32).reshape(-1),
        act_scale=None if act_scale is None else float(np.float32(act_scale)),
        mode=mode,
    )
    return layer.validate()


def section_sizes(h: int, o: int, g: int) -> dict[str, int]:
    n_g = h // g
    return {
        "codes": math.ceil(h * o / 2),
        "S2": n_g * o,
        "ZP": math.ceil(n_g * o / 2),
        "s1": 4 * o,
        "k": 4 * h,
        "act_scale": 4,
    }


def layer_to_bytes(layer: DgqLayer) -> bytes:
    out = [
        HEADER.pack(MAGIC, layer.h, layer.o, layer.g, MODES.index(layer.mode)),
        _pad_pack(layer.codes),
        np.asarray(layer.S2, dtype=np.int8).tobytes(),
        _pad_pack(layer.ZP),
        np.asarray(layer.s1, dtype="<f4").tobytes(),
        np.asarray(layer.k, dtype="<f4").tobytes(),
        np.float32(np.nan if layer.act_scale is None else layer.act_scale).astype("<f4").tobytes(),
    ]
    return b"".join(out)


def layer_from_bytes(buf: bytes, validate: bool = True) -> DgqLayer:
    if len(buf) < HEADER_SIZE or buf[:4] != MAGIC:
        raise LayerValidationError("magic", f"not a DGQ1 file (magic {buf[:4]!r})")
    _, h, o, g, mode = HEADER.unpack_from(buf)
    if mode >= len(MODES):
        raise LayerValidationError("mode", f"unknown mode code {mode}")
    if g < 1 or h % g:
        raise LayerValidationError("g", f"group size {g} must divide h={h}")
    sizes = section_sizes(h, o, g)
    need = HEADER_SIZE + sum(sizes.values())
    if len(buf) != need:
        raise LayerValidationError("length", f"file has {len(buf)} bytes, header implies {need}")
    n_g = h // g
    off = HEADER_SIZE
    sec = {}
    for name, size in sizes.items():
        sec[name] = buf[off : off + size]
        off += size
    act = float(np.frombuffer(sec["act_scale"], "<f4")[0])
    layer = DgqLayer(
        h=h,
        o=o,
        g=g,
        codes=unpack_nibbles(sec["codes"], h * o).reshape(h, o),
        S2=np.frombuffer(sec["S2"], np.int8).reshape(n_g, o).copy(),
        ZP=unpack_nibbles(sec["ZP"], n_g * o).reshape(n_g, o),
        s1=np.frombuffer(sec["s1"], "<f4").astype(np.float32),
        k=np.frombuffer(sec["k"], "<f4").astype(np.float32),
        act_scale=None if np.isnan(act) else act,
        mode=MODES[mode],
    )
    return layer.validate() if validate else layer


def write_dgq(layer: DgqLayer, path) -> None:
    with open(path, "wb") as f:
        f.write(layer_to_bytes(layer))


def read_dgq(path, validate: bool = True) -> DgqLayer:
    with open(path, "rb") as f:
        return layer_from_bytes(f.read(), validate=validate)


def dequantize_to_s8(layer: DgqLayer) -> np.ndarray:
    """Integer-only expansion ``S2[group(i), c] * (code[i, c] - ZP[group(i), c])``."""
    g = layer.g
    codes = np.asarray(layer.codes, dtype=np.int32)
    zp = np.repeat(np.asarray(layer.ZP, dtype=np.int32), g, axis=0)
    s2 = np.repeat(np.asarray(layer.S2, dtype=np.int32), g, axis=0)
    w = s2 * (codes - zp)
    if w.size and (w.min() < -127 or w.max() > 127):
        n = int(((w < -127) | (w > 127)).sum())
        raise Int8OverflowError(f"{n} dequantized weights outside [-127, 127]; artifact corrupted")
    return w.astype(np.int8)


def dequantize_to_f32(layer: DgqLayer) -> np.ndarray:
    """Float reconstruction ``s1[c] * W_s8[i, c]`` (smoothing left folded in)."""
    return (layer.s1[None, :] * dequantize_to_s8(layer).astype(np.float32)).astype(np.float32)


def overflow_violations(layer: DgqLayer) -> int:
    """Count of weights whose ``S2 * (code - ZP)`` leaves [-127, 127]."""
    g = layer.g
    w = np.repeat(layer.S2.astype(np.int64), g, axis=0) * (
        layer.codes.astype(np.int64) - np.repeat(layer.ZP.astype(np.int64), g, axis=0)
    )
    return int(((w < -127) | (w > 127)).sum())


def byte_accounting(layer: DgqLayer | tuple[int, int, int]) -> dict:
    """Exact storage bytes of the artifact payload against int8 and fp16 weights.

    Accepts a layer or an ``(h, o, g)`` tuple.
    """
    h, o, g = (layer.h, layer.o, layer.g) if isinstance(layer, DgqLayer) else layer
    sizes = section_sizes(h, o, g)
    weight = sizes["codes"]
    scale = sum(v for name, v in sizes.items() if name != "codes")
    total = weight + scale
    return {
        "weight_bytes": weight,
        "scale_bytes": scale,
        "total": total,
        "ratio_vs_int8": total / (h * o) if h * o else 0.0,
        "ratio_vs_fp16": total / (2 * h * o) if h * o else 0.0,
    }
