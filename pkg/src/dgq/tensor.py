"""Dense 2-D tensor container, the ``DGT1`` binary file format, and synthetic data.

File layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"DGT1"
    4       1     dtype code (0=float32, 1=int8, 2=int32, 3=uint4-packed)
    5       8     rows   (uint64)
    13      8     cols   (uint64)
    21      ...   payload, row-major

uint4-packed payloads hold two values per byte; the value at the even column
index sits in the LOW nibble, the odd index in the HIGH nibble.

Synthetic tensors are drawn from numpy's ``Philox`` (4x64 counter-based)
bit generator seeded with the integer seed, via ``Generator.standard_normal``
in float64, then cast to float32.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

MAGIC = b"DGT1"
HEADER = struct.Struct("<4sBQQ")
HEADER_SIZE = HEADER.size  # 21

PathLike = Union[str, "os.PathLike[str]"]


class TensorFormatError(ValueError):
    """Malformed ``DGT1`` file."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class DType(enum.IntEnum):
    FLOAT32 = 0
    INT8 = 1
    INT32 = 2
    UINT4 = 3

    @property
    def numpy_dtype(self) -> np.dtype:
        return _NUMPY_DTYPES[self]

    def payload_size(self, rows: int, cols: int) -> int:
        if self is DType.UINT4:
            return rows * cols // 2
        return rows * cols * self.numpy_dtype.itemsize


# uint4 values are carried unpacked in memory, one per uint8
_NUMPY_DTYPES = {
    DType.FLOAT32: np.dtype("<f4"),
    DType.INT8: np.dtype("i1"),
    DType.INT32: np.dtype("<i4"),
    DType.UINT4: np.dtype("u1"),
}


def pack_nibbles(values: np.ndarray) -> bytes:
    """Pack a flat sequence of 4-bit values (even count) into bytes."""
    v = np.asarray(values, dtype=np.uint8).reshape(-1)
    if v.size % 2:
        raise ValueError("nibble packing needs an even number of values")
    if v.size and v.max() > 15:
        raise ValueError("uint4 value out of range [0, 15]")
    return (v[0::2] | (v[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_nibbles(buf: bytes, count: int | None = None) -> np.ndarray:
    """Inverse of :func:`pack_nibbles`; returns a flat uint8 array."""
    b = np.frombuffer(buf, dtype=np.uint8)
    out = np.empty(b.size * 2, dtype=np.uint8)
    out[0::2] = b & 0x0F
    out[1::2] = b >> 4
    return out if count is None else out[:count]


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable row-major 2-D tensor with a dtype tag.

    ``data`` is a read-only numpy array; for ``DType.UINT4`` it holds the
    unpacked values 0..15 as uint8.
    """

    data: np.ndarray
    dtype: DType

    def __post_init__(self):
        dtype = DType(self.dtype)
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {arr.shape}")
        if dtype is DType.UINT4:
            if arr.shape[1] % 2:
                raise ValueError("uint4-packed tensors need an even column count")
            if arr.size and (arr.min() < 0 or arr.max() > 15):
                raise ValueError("uint4 payload outside [0, 15]")
        elif dtype is DType.INT8 and arr.size and (arr.min() < -128 or arr.max() > 127):
            raise ValueError("int8 payload outside [-128, 127]")
        if arr.dtype != dtype.numpy_dtype:
            arr = arr.astype(dtype.numpy_dtype)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dtype", dtype)

    @classmethod
    def from_array(cls, arr, dtype: DType | str | int | None = None) -> "Tensor":
        arr = np.asarray(arr)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if dtype is None:
            dtype = {np.dtype("i1"): DType.INT8, np.dtype("i4"): DType.INT32}.get(
                arr.dtype, DType.FLOAT32
            )
        elif isinstance(dtype, str):
            dtype = DType[dtype.upper()]
        return cls(arr, DType(dtype))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def payload(self) -> bytes:
        if self.dtype is DType.UINT4:
            return pack_nibbles(self.data)
        return self.data.tobytes()

    def __eq__(self, other) -> bool:
        # bitwise, so NaN payloads compare equal to themselves
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self.payload() == other.payload()
        )

    def __hash__(self):
        return hash((int(self.dtype), self.shape, self.payload()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name.lower()})"


def tensor_to_bytes(t: Tensor) -> bytes:
    return HEADER.pack(MAGIC, int(t.dtype), t.rows, t.cols) + t.payload()


def tensor_from_bytes(buf: bytes) -> Tensor:
    if len(buf) < HEADER_SIZE:
        if buf[:4] != MAGIC:
            raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
        raise TruncatedPayloadError(f"header truncated: {len(buf)} < {HEADER_SIZE} bytes")
    magic, code, rows, cols = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    try:
        dtype = DType(code)
    except ValueError:
        raise UnknownDtypeError(f"unknown dtype code {code}") from None
    if dtype is DType.UINT4 and cols % 2:
        raise TensorFormatError("uint4-packed tensor with odd column count")
    need = dtype.payload_size(rows, cols)
    body = buf[HEADER_SIZE:]
    if len(body) < need:
        raise TruncatedPayloadError(f"payload has {len(body)} bytes, header needs {need}")
    if len(body) > need:
        raise TensorFormatError(f"{len(body) - need} trailing bytes after payload")
    if dtype is DType.UINT4:
        arr = unpack_nibbles(body).reshape(rows, cols)
    else:
        arr = np.frombuffer(body, dtype=dtype.numpy_dtype).reshape(rows, cols)
    return Tensor(arr, dtype)


def write_tensor(t: Tensor, path: PathLike) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def read_tensor(path: PathLike) -> Tensor:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


def _draw(rows: int, cols: int, seed: int, count: int, magnitude: float):
    if not 0 <= count <= cols:
        raise ValueError(f"outlier count {count} must be in [0, {cols}]")
    rng = np.random.Generator(np.random.Philox(seed))
    data = rng.standard_normal((rows, cols)).astype(np.float32)
    idx = np.sort(rng.choice(cols, size=count, replace=False)) if count else np.empty(0, int)
    if count and magnitude != 1:
        data[:, idx] *= np.float32(magnitude)
    return data, idx


def gen_synthetic(
    rows: int, cols: int, seed: int, outliers: dict | tuple | None = None
) -> Tensor:
    """Seeded standard-normal float32 tensor with amplified outlier columns.

    ``outliers`` is ``{"count": n, "magnitude": m}`` (or a ``(n, m)`` tuple):
    ``n`` distinct columns, chosen from the same stream, are multiplied by ``m``.
    """
    count, magnitude = _outlier_args(outliers)
    data, _ = _draw(rows, cols, seed, count, magnitude)
    return Tensor(data, DType.FLOAT32)


def outlier_columns(rows: int, cols: int, seed: int, outliers) -> np.ndarray:
    """Sorted column indices that :func:`gen_synthetic` amplifies."""
    count, magnitude = _outlier_args(outliers)
    return _draw(rows, cols, seed, count, magnitude)[1]


def _outlier_args(outliers) -> tuple[int, float]:
    if outliers is None:
        return 0, 1.0
    if isinstance(outliers, dict):
        return int(outliers.get("count", 0)), float(outliers.get("magnitude", 1.0))
    count, magnitude = outliers
    return int(count), float(magnitude)
