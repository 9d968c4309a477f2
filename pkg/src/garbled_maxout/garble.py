"""Yao garbling with free-XOR, free-NOT and point-and-permute.

Labels are 128-bit integers; their byte form is 16 bytes big-endian, so the
permute (select) bit is the least significant bit of the last byte. Every
wire's 1-label is its 0-label XOR a session-wide offset ``R`` whose permute
bit is 1. AND gates get four ciphertexts ordered by the permute bits of the
two input labels::

    table[2*pa + pb] = label_out(va & vb) XOR KDF(label_a, label_b, gate_index)

where KDF is the first 16 bytes of SHA-256(a || b || gate_index as 4-byte
big-endian). Hashing the XOR or sum of the two labels instead would collide
between rows under free-XOR, hence the concatenation.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .circuit import AND, NOT, XOR, Circuit
from .errors import ContractError, EvaluationError

LABEL_BYTES = 16
_TOP = (1 << 128) - 1


def kdf(a: int, b: int, gate_index: int) -> int:
    h = hashlib.sha256(a.to_bytes(16, "big") + b.to_bytes(16, "big") + gate_index.to_bytes(4, "big"))
    return int.from_bytes(h.digest()[:16], "big")


def label_to_bytes(label: int) -> bytes:
    return label.to_bytes(LABEL_BYTES, "big")


def label_from_bytes(data: bytes) -> int:
    if len(data) != LABEL_BYTES:
        raise ContractError(f"labels are {LABEL_BYTES} bytes, got {len(data)}")
    return int.from_bytes(data, "big")


def _output_digest(label: int, index: int) -> bytes:
    return hashlib.sha256(b"out" + label_to_bytes(label) + index.to_bytes(4, "big")).digest()[:16]


def _random_label(rng: np.random.Generator) -> int:
    return int.from_bytes(rng.bytes(LABEL_BYTES), "big")


@dataclass(frozen=True)
class OutputDecoding:
    """Per output wire: permute bit of its 0-label and digests of both labels."""

    perm_bits: tuple[int, ...]
    digests: tuple[tuple[bytes, bytes], ...]

    def to_bytes(self) -> bytes:
        out = [struct.pack("<H", len(self.perm_bits))]
        for perm, (d0, d1) in zip(self.perm_bits, self.digests):
            out.append(bytes([perm]) + d0 + d1)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "OutputDecoding":
        try:
            (count,) = struct.unpack_from("<H", data)
        except struct.error:
            raise ContractError("decode map truncated") from None
        if len(data) != 2 + 33 * count:
            raise ContractError("decode map has wrong length")
        perms, digests = [], []
        for k in range(count):
            rec = data[2 + 33 * k : 2 + 33 * (k + 1)]
            if rec[0] not in (0, 1):
                raise ContractError("decode map permute bit must be 0 or 1")
            perms.append(rec[0])
            digests.append((rec[1:17], rec[17:33]))
        return cls(tuple(perms), tuple(digests))


@dataclass(frozen=True)
class InputEncoding:
    """Garbler-side label pairs for every input wire (incl. the constant zero)."""

    pairs: Mapping[int, tuple[int, int]]

    def active(self, wire: int, bit: int) -> int:
        return self.pairs[wire][int(bit)]

    def labels_for(self, wires: Sequence[int], bits: Sequence[int]) -> list[int]:
        return [self.active(w, b) for w, b in zip(wires, bits)]


GC_MAGIC = b"GMGC"
GC_VERSION = 1
_GC_HEADER = struct.Struct("<4sB32sIBH")


@dataclass(frozen=True)
class GarbledCircuit:
    circuit: Circuit
    tables: tuple[tuple[int, int, int, int], ...]
    l: int = 0
    p: int = 0

    @property
    def and_count(self) -> int:
        return len(self.tables)

    def to_bytes(self) -> bytes:
        head = _GC_HEADER.pack(GC_MAGIC, GC_VERSION, self.circuit.digest(), len(self.tables), self.l, self.p)
        return head + b"".join(label_to_bytes(ct) for row in self.tables for ct in row)

    @classmethod
    def from_bytes(cls, data: bytes, circuit: Circuit) -> "GarbledCircuit":
        if len(data) < _GC_HEADER.size:
            raise ContractError("garbled circuit truncated")
        magic, version, digest, count, l, p = _GC_HEADER.unpack_from(data)
        if magic != GC_MAGIC or version != GC_VERSION:
            raise ContractError("not a garbled circuit (bad magic or version)")
        if digest != circuit.digest():
            raise ContractError("garbled circuit was made for a different topology")
        if count != circuit.and_count or len(data) != _GC_HEADER.size + 64 * count:
            raise ContractError("garbled table size does not match the circuit")
        body = data[_GC_HEADER.size :]
        cts = [int.from_bytes(body[k : k + 16], "big") for k in range(0, len(body), 16)]
        tables = tuple(tuple(cts[4 * g : 4 * g + 4]) for g in range(count))
        return cls(circuit, tables, l, p)


HEADER_BYTES = _GC_HEADER.size


def garble(c: Circuit, rng: np.random.Generator, *, l: int = 0, p: int = 0,
           kdf: Callable[[int, int, int], int] = kdf):
    """Garble ``c``. Returns ``(GarbledCircuit, InputEncoding, OutputDecoding)``."""
    offset = _random_label(rng) | 1
    zero = [0] * c.wire_count
    for w in c.input_wires:
        zero[w] = _random_label(rng)
    tables = []
    for index, g in enumerate(c.gates):
        if g.kind == XOR:
            zero[g.out] = zero[g.a] ^ zero[g.b]
        elif g.kind == NOT:
            zero[g.out] = zero[g.a] ^ offset
        elif g.kind == AND:
            out0 = _random_label(rng)
            zero[g.out] = out0
            a0, b0 = zero[g.a], zero[g.b]
            pa, pb = a0 & 1, b0 & 1
            row = [0, 0, 0, 0]
            for i in (0, 1):
                va = i ^ pa
                la = a0 ^ offset if va else a0
                for j in (0, 1):
                    vb = j ^ pb
                    lb = b0 ^ offset if vb else b0
                    lo = out0 ^ offset if va & vb else out0
                    row[2 * i + j] = lo ^ kdf(la, lb, index)
            tables.append(tuple(row))
        else:
            raise ContractError(f"unknown gate kind {g.kind!r}")
    encoding = InputEncoding({w: (zero[w], zero[w] ^ offset) for w in c.input_wires})
    decoding = OutputDecoding(
        tuple(zero[w] & 1 for w in c.outputs),
        tuple((_output_digest(zero[w], k), _output_digest(zero[w] ^ offset, k)) for k, w in enumerate(c.outputs)),
    )
    return GarbledCircuit(c, tuple(tables), l, p), encoding, decoding


def evaluate_garbled(gc: GarbledCircuit, active: Mapping[int, int],
                     kdf: Callable[[int, int, int], int] = kdf) -> list[int]:
    """Evaluate with one active label per input wire; returns active output labels."""
    c = gc.circuit
    labels = [0] * c.wire_count
    for w in c.input_wires:
        if w not in active:
            raise EvaluationError(f"no active label for input wire {w}")
        labels[w] = active[w] & _TOP
    t = 0
    for index, g in enumerate(c.gates):
        if g.kind == XOR:
            labels[g.out] = labels[g.a] ^ labels[g.b]
        elif g.kind == NOT:
            labels[g.out] = labels[g.a]
        else:
            a, b = labels[g.a], labels[g.b]
            labels[g.out] = gc.tables[t][((a & 1) << 1) | (b & 1)] ^ kdf(a, b, index)
            t += 1
    return [labels[w] for w in c.outputs]


def decode_outputs(active: Sequence[int], decoding: OutputDecoding) -> list[int]:
    if len(active) != len(decoding.perm_bits):
        raise EvaluationError("output label count does not match the decode map")
    bits = []
    for k, (label, perm) in enumerate(zip(active, decoding.perm_bits)):
        bit = (label & 1) ^ perm
        if _output_digest(label, k) != decoding.digests[k][bit]:
            raise EvaluationError(f"output wire {k}: label matches neither candidate")
        bits.append(bit)
    return bits
