"""Arithmetic over Z_q with q = 2**l.

Scalar value types (:class:`RingElement`, :class:`SignedValue`,
:class:`BitVector`) carry their bit width so that mixing widths is caught
early. The ``*_array`` helpers operate on ``numpy.uint64`` arrays and are what
the sharing and protocol layers use in bulk; uint64 arithmetic wraps modulo
2**64, so masking with ``q - 1`` afterwards yields the residue mod 2**l for any
``l <= 64``.

Bit vectors are stored least significant bit first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, RangeError

MAX_BITS = 64


def _check_width(l: int) -> None:
    if not isinstance(l, (int, np.integer)) or not 1 <= l <= MAX_BITS:
        raise ContractError(f"bit width must be an integer in [1, {MAX_BITS}], got {l!r}")


def modulus(l: int) -> int:
    _check_width(l)
    return 1 << l


def signed_range(l: int) -> tuple[int, int]:
    """Inclusive bounds of Z_q = {-q/2, ..., q/2 - 1}."""
    _check_width(l)
    return -(1 << (l - 1)), (1 << (l - 1)) - 1


@dataclass(frozen=True)
class RingElement:
    value: int
    bit_width: int

    def __post_init__(self):
        _check_width(self.bit_width)
        if not 0 <= self.value < (1 << self.bit_width):
            raise ContractError(f"{self.value} is not a residue mod 2**{self.bit_width}")

    @classmethod
    def reduce(cls, value: int, bit_width: int) -> "RingElement":
        return cls(int(value) % (1 << bit_width), bit_width)

    def __int__(self):
        return self.value


@dataclass(frozen=True)
class SignedValue:
    value: int
    bit_width: int

    def __post_init__(self):
        lo, hi = signed_range(self.bit_width)
        if not lo <= self.value <= hi:
            raise RangeError(f"{self.value} outside Z_q for l={self.bit_width}")

    def __int__(self):
        return self.value


@dataclass(frozen=True)
class BitVector:
    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ContractError("bits must be 0 or 1")
        _check_width(len(self.bits))

    @property
    def bit_width(self) -> int:
        return len(self.bits)

    def msb_first(self) -> tuple[int, ...]:
        """The bits in the most-significant-first order used for display."""
        return tuple(reversed(self.bits))


def mod_add(a: RingElement, b: RingElement) -> RingElement:
    if a.bit_width != b.bit_width:
        raise ContractError(f"width mismatch: {a.bit_width} vs {b.bit_width}")
    return RingElement((a.value + b.value) & ((1 << a.bit_width) - 1), a.bit_width)


def mod_sub(a: RingElement, b: RingElement) -> RingElement:
    if a.bit_width != b.bit_width:
        raise ContractError(f"width mismatch: {a.bit_width} vs {b.bit_width}")
    return RingElement((a.value - b.value) & ((1 << a.bit_width) - 1), a.bit_width)


def mod_mul(a: RingElement, b: RingElement) -> RingElement:
    if a.bit_width != b.bit_width:
        raise ContractError(f"width mismatch: {a.bit_width} vs {b.bit_width}")
    return RingElement((a.value * b.value) & ((1 << a.bit_width) - 1), a.bit_width)


def mu(a: RingElement) -> SignedValue:
    """Partial inverse of reduction mod q (two's complement reinterpretation)."""
    q = 1 << a.bit_width
    return SignedValue(a.value - q if a.value >= q // 2 else a.value, a.bit_width)


def lift(s: SignedValue | int, bit_width: int | None = None) -> RingElement:
    if not isinstance(s, SignedValue):
        if bit_width is None:
            raise ContractError("bit_width required when lifting a plain int")
        s = SignedValue(int(s), bit_width)
    return RingElement(s.value % (1 << s.bit_width), s.bit_width)


def to_bits(a: RingElement) -> BitVector:
    return BitVector(tuple((a.value >> j) & 1 for j in range(a.bit_width)))


def from_bits(v: BitVector | Sequence[int]) -> RingElement:
    if not isinstance(v, BitVector):
        v = BitVector(tuple(int(b) for b in v))
    return RingElement(sum(b << j for j, b in enumerate(v.bits)), v.bit_width)


def element_size(l: int) -> int:
    """Serialized size in bytes of one residue."""
    _check_width(l)
    return (l + 7) // 8


def to_bytes(a: RingElement) -> bytes:
    return a.value.to_bytes(element_size(a.bit_width), "little")


def from_bytes(data: bytes, bit_width: int) -> RingElement:
    if len(data) != element_size(bit_width):
        raise ContractError(f"expected {element_size(bit_width)} bytes, got {len(data)}")
    return RingElement(int.from_bytes(data, "little"), bit_width)


# -- numpy helpers -----------------------------------------------------------


def mask(l: int) -> np.uint64:
    _check_width(l)
    return np.uint64((1 << l) - 1)


def reduce_array(values, l: int) -> np.ndarray:
    """Reduce (possibly negative or large) integers to residues as uint64."""
    arr = np.asarray(values)
    if arr.dtype == object or arr.dtype.kind == "f":
        if arr.dtype.kind == "f" and not np.all(arr == np.round(arr)):
            raise ContractError("non-integral values cannot be reduced")
        flat = [int(v) % (1 << l) for v in arr.ravel()]
        return np.array(flat, dtype=np.uint64).reshape(arr.shape)
    if arr.dtype.kind not in "iub":
        raise ContractError(f"cannot reduce array of dtype {arr.dtype}")
    if arr.dtype.kind == "i":
        arr = arr.astype(np.int64)
    return arr.astype(np.uint64) & mask(l)


def mu_array(values: np.ndarray, l: int) -> np.ndarray:
    """Elementwise ``mu`` on uint64 residues, returned as int64."""
    u = np.asarray(values, dtype=np.uint64) & mask(l)
    # sign-extend: move bit l-1 to bit 63, reinterpret, shift back arithmetically
    shift = np.uint64(MAX_BITS - l)
    return (u << shift).view(np.int64) >> np.int64(MAX_BITS - l)


def random_residues(rng: np.random.Generator, shape, l: int) -> np.ndarray:
    """Uniform residues on N_q from an injected generator."""
    raw = rng.integers(0, np.iinfo(np.uint64).max, size=shape, dtype=np.uint64, endpoint=True)
    return raw & mask(l)


_NATIVE = {1: "u1", 2: "<u2", 4: "<u4", 8: "<u8"}


def array_to_bytes(values: np.ndarray, l: int) -> bytes:
    """Row-major serialization, ``element_size(l)`` little-endian bytes per entry."""
    size = element_size(l)
    flat = np.ascontiguousarray(np.asarray(values, dtype=np.uint64) & mask(l)).ravel()
    if size in _NATIVE:
        return flat.astype(_NATIVE[size]).tobytes()
    return b"".join(int(v).to_bytes(size, "little") for v in flat)


def array_from_bytes(data: bytes, l: int, shape) -> np.ndarray:
    size = element_size(l)
    shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (int(shape),)
    count = int(np.prod(shape))
    if len(data) != size * count:
        raise ContractError(f"expected {size * count} bytes for shape {shape}, got {len(data)}")
    if size in _NATIVE:
        flat = np.frombuffer(data, dtype=_NATIVE[size]).astype(np.uint64)
    else:
        flat = np.array(
            [int.from_bytes(data[i : i + size], "little") for i in range(0, len(data), size)],
            dtype=np.uint64,
        )
    out = flat.reshape(shape)
    if np.any(out > mask(l)):
        raise ContractError("serialized residue exceeds 2**l - 1")
    return out


def bits_of(value: int, l: int) -> list[int]:
    """LSB-first bits of a non-negative integer (no range check beyond masking)."""
    return [(int(value) >> j) & 1 for j in range(l)]


def int_of_bits(bits: Iterable[int]) -> int:
    return sum(int(b) << j for j, b in enumerate(bits))
