"""Q16.16 fixed-point scalars and tensors.

All protocol arithmetic runs on signed 32-bit Q16.16 values: 16 integer bits,
16 fractional bits. The rules below are the cross-party contract; any
implementation that follows them reproduces every activation, score, and
commitment leaf bit-for-bit.

  * add/sub: plain integer add/sub on raw values, result must fit in int32.
  * mul: widen to 64-bit (or arbitrary precision), multiply, then one
    arithmetic shift right by 16. The shift truncates toward negative
    infinity. Result must fit in int32.
  * div: (a << 16) floor-divided by b, floored toward negative infinity.
  * dot products and convolutions: accumulate the widened products exactly,
    then apply a single shift by 16 at the end (not one per product), then
    add the bias raw value.
  * overflow is always an error (`Overflow`), never a silent wrap.

Tensors are stored as row-major int64 numpy buffers holding raw values; the
extra headroom is working space only, every materialized result is checked
back into the int32 range.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import MalformedMessage, Overflow, ShapeMismatch

FRAC_BITS = 16
ONE = 1 << FRAC_BITS
RAW_MIN = -(1 << 31)
RAW_MAX = (1 << 31) - 1

_TENSOR_MAGIC = b"FXT1"


def check_raw(raw: int) -> int:
    if raw < RAW_MIN or raw > RAW_MAX:
        raise Overflow(f"raw value {raw} outside Q16.16 range")
    return raw


def from_float(value: float) -> int:
    """Quantize a float to a raw Q16.16 value (round half to even)."""
    return check_raw(int(round(value * ONE)))


def to_float(raw: int) -> float:
    return raw / ONE


def raw_add(a: int, b: int) -> int:
    return check_raw(a + b)


def raw_sub(a: int, b: int) -> int:
    return check_raw(a - b)


def raw_mul(a: int, b: int) -> int:
    # >> on a negative python int truncates toward -inf, which is the rule.
    return check_raw((a * b) >> FRAC_BITS)


def raw_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("fixed-point division by zero")
    return check_raw((a << FRAC_BITS) // b)


@dataclass(frozen=True)
class FixedScalar:
    """One Q16.16 value. `raw` is the underlying signed 32-bit integer."""

    raw: int

    def __post_init__(self):
        check_raw(self.raw)

    @classmethod
    def from_float(cls, value: float) -> "FixedScalar":
        return cls(from_float(value))

    @classmethod
    def from_int(cls, value: int) -> "FixedScalar":
        return cls(check_raw(value << FRAC_BITS))

    @property
    def value(self) -> float:
        return to_float(self.raw)

    def exact(self) -> Fraction:
        return Fraction(self.raw, ONE)

    def __add__(self, other: "FixedScalar") -> "FixedScalar":
        return FixedScalar(raw_add(self.raw, other.raw))

    def __sub__(self, other: "FixedScalar") -> "FixedScalar":
        return FixedScalar(raw_sub(self.raw, other.raw))

    def __mul__(self, other: "FixedScalar") -> "FixedScalar":
        return FixedScalar(raw_mul(self.raw, other.raw))

    def __truediv__(self, other: "FixedScalar") -> "FixedScalar":
        return FixedScalar(raw_div(self.raw, other.raw))

    def __neg__(self) -> "FixedScalar":
        return FixedScalar(check_raw(-self.raw))

    def __lt__(self, other: "FixedScalar") -> bool:
        return self.raw < other.raw

    def __le__(self, other: "FixedScalar") -> bool:
        return self.raw <= other.raw

    def __repr__(self) -> str:
        return f"FixedScalar({self.raw} ~ {self.value:.6f})"


def check_raw_array(arr: np.ndarray) -> np.ndarray:
    """Validate every element of an int64/object raw array into int32 range."""
    if arr.dtype == object:
        flat = arr.reshape(-1)
        for v in flat:
            if v < RAW_MIN or v > RAW_MAX:
                raise Overflow(f"raw value {v} outside Q16.16 range")
        return arr.astype(np.int64)
    if arr.size and (arr.min() < RAW_MIN or arr.max() > RAW_MAX):
        raise Overflow("tensor element outside Q16.16 range")
    return arr


@dataclass(frozen=True)
class FixedTensor:
    """N-dimensional Q16.16 tensor; `raw` is a row-major int64 buffer."""

    shape: tuple
    raw: np.ndarray

    def __post_init__(self):
        if self.raw.dtype != np.int64:
            object.__setattr__(self, "raw", self.raw.astype(np.int64))
        if tuple(self.raw.shape) != tuple(self.shape):
            raise ShapeMismatch(f"buffer shape {self.raw.shape} vs declared {self.shape}")
        check_raw_array(self.raw)
        self.raw.flags.writeable = False

    @classmethod
    def from_raw(cls, arr: np.ndarray) -> "FixedTensor":
        arr = np.asarray(arr, dtype=np.int64)
        return cls(tuple(arr.shape), arr)

    @classmethod
    def from_float_array(cls, arr) -> "FixedTensor":
        arr = np.asarray(arr, dtype=np.float64)
        raw = np.round(arr * ONE).astype(np.int64)
        return cls(tuple(arr.shape), raw)

    @classmethod
    def zeros(cls, shape) -> "FixedTensor":
        return cls(tuple(shape), np.zeros(shape, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.raw.size)

    def to_float_array(self) -> np.ndarray:
        return self.raw.astype(np.float64) / ONE

    def reshape(self, shape) -> "FixedTensor":
        return FixedTensor(tuple(shape), self.raw.reshape(shape))

    def flat(self) -> np.ndarray:
        """Row-major 1-D view of the raw buffer."""
        return self.raw.reshape(-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FixedTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.raw, other.raw))

    def __hash__(self):
        return hash((self.shape, self.raw.tobytes()))


def tensor_to_bytes(t: FixedTensor) -> bytes:
    """Canonical tensor encoding (commitment leaves, wire payloads).

    Layout: b"FXT1" | u8 ndim | ndim x u32 big-endian dims | int32
    little-endian raw data, row-major.
    """
    head = _TENSOR_MAGIC + struct.pack(">B", len(t.shape))
    head += b"".join(struct.pack(">I", d) for d in t.shape)
    return head + t.raw.astype("<i4").tobytes()


def tensor_from_bytes(data: bytes) -> FixedTensor:
    if len(data) < 5 or data[:4] != _TENSOR_MAGIC:
        raise MalformedMessage("bad tensor header")
    ndim = data[4]
    off = 5 + 4 * ndim
    if len(data) < off:
        raise MalformedMessage("truncated tensor dims")
    shape = tuple(struct.unpack(">I", data[5 + 4 * i : 9 + 4 * i])[0] for i in range(ndim))
    count = 1
    for d in shape:
        count *= d
    if len(data) != off + 4 * count:
        raise MalformedMessage("tensor payload length mismatch")
    raw = np.frombuffer(data, dtype="<i4", offset=off).astype(np.int64).reshape(shape)
    return FixedTensor(shape, raw)


def exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact integer matmul of raw matrices; returns UNSHIFTED accumulations.

    Uses int64 when the worst-case accumulation provably fits, otherwise
    falls back to arbitrary-precision objects. Callers apply the >>16 shift.
    """
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    k = a.shape[1]
    bound = int(np.abs(a).max()) * int(np.abs(b).max()) * k
    if bound <= (1 << 62):
        return a.astype(np.int64) @ b.astype(np.int64)
    return np.asarray(a.astype(object) @ b.astype(object))


def shift_right(arr: np.ndarray, bits: int = FRAC_BITS) -> np.ndarray:
    """Arithmetic shift (floor division by 2^bits) for int64 or object arrays."""
    if arr.dtype == object:
        return np.asarray([int(v) >> bits for v in arr.reshape(-1)], dtype=object).reshape(arr.shape)
    return arr >> bits
