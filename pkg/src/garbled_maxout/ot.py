"""Two-message 1-out-of-2 oblivious transfer (Bellare-Micali style).

The group is the order-Q subgroup of quadratic residues modulo a safe prime
P = 2Q + 1. ``OTParams`` fixes a generator g and an element C whose discrete
log nobody knows (hashed into the group), which lets the protocol run in two
messages:

1. Receiver with choice bit s picks k, sets ``PK_s = g^k`` and
   ``PK_{1-s} = C / g^k`` and sends ``PK_0``.
2. Sender derives ``PK_1 = C / PK_0``, picks r and sends ``g^r`` plus, for
   each slot t, ``SHA-256(PK_t^r || index || t)`` split into a 16-byte pad
   (XORed onto ``m_t``) and a 16-byte integrity tag.

The receiver can only compute ``PK_s^r = (g^r)^k``; the other slot's tag
fails to verify.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import gmpy2
import numpy as np

from .errors import ProtocolError

PAYLOAD_BYTES = 16


@dataclass(frozen=True)
class OTParams:
    name: str
    prime: int
    order: int
    generator: int
    public_element: int
    secure: bool = True

    @property
    def element_bytes(self) -> int:
        return (self.prime.bit_length() + 7) // 8

    def encode(self, y: int) -> bytes:
        return y.to_bytes(self.element_bytes, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.element_bytes:
            raise ProtocolError(f"group element must be {self.element_bytes} bytes")
        y = int.from_bytes(data, "big")
        self.check_member(y)
        return y

    def check_member(self, y: int) -> None:
        # For a safe prime, the order-Q subgroup is exactly the quadratic residues.
        if not 1 < y < self.prime - 1 or gmpy2.legendre(y, self.prime) != 1:
            raise ProtocolError("malformed group element")

    def random_exponent(self, rng: np.random.Generator) -> int:
        nbytes = (self.order.bit_length() + 7) // 8 + 8
        return 1 + int.from_bytes(rng.bytes(nbytes), "big") % (self.order - 1)


def _make_params(name: str, order: int, secure: bool) -> OTParams:
    prime = 2 * order + 1
    seed = hashlib.sha256(b"garbled-maxout ot public element " + name.encode()).digest()
    h = int.from_bytes(seed * 2, "big") % prime
    return OTParams(name, prime, order, 4, pow(h, 2, prime), secure)


# Q and 2Q+1 prime; found by incremental search from SHA-256-derived start points.
DEFAULT_PARAMS = _make_params(
    "qr256", 0x98DFCF92E2B1FCA111D21EAFC07378641B6D69E4F736E18DEA22F10344703C1B, True
)
# 61-bit subgroup: fast, INSECURE, tests only.
TEST_PARAMS = _make_params("qr61-insecure", 0x1574453FC6A1A579, False)


@dataclass(frozen=True)
class OTRequest:
    elements: tuple[int, ...]

    def to_bytes(self, params: OTParams) -> bytes:
        return b"".join(params.encode(y) for y in self.elements)

    @classmethod
    def from_bytes(cls, data: bytes, params: OTParams) -> "OTRequest":
        size = params.element_bytes
        if len(data) % size:
            raise ProtocolError("OT request length is not a multiple of the element size")
        return cls(tuple(params.decode(data[i : i + size]) for i in range(0, len(data), size)))


@dataclass(frozen=True)
class OTResponse:
    ephemerals: tuple[int, ...]
    payloads: tuple[tuple[bytes, bytes], ...]

    def to_bytes(self, params: OTParams) -> bytes:
        return b"".join(params.encode(e) + p0 + p1 for e, (p0, p1) in zip(self.ephemerals, self.payloads))

    @classmethod
    def from_bytes(cls, data: bytes, params: OTParams) -> "OTResponse":
        rec = params.element_bytes + 4 * PAYLOAD_BYTES
        if len(data) % rec:
            raise ProtocolError("OT response length is not a multiple of the record size")
        eph, pays = [], []
        for i in range(0, len(data), rec):
            eph.append(params.decode(data[i : i + params.element_bytes]))
            body = data[i + params.element_bytes : i + rec]
            pays.append((body[: 2 * PAYLOAD_BYTES], body[2 * PAYLOAD_BYTES :]))
        return cls(tuple(eph), tuple(pays))


@dataclass
class ReceiverState:
    choices: tuple[int, ...]
    secrets: tuple[int, ...]
    used: bool = False


def _wrap_key(params: OTParams, shared: int, index: int, slot: int) -> bytes:
    return hashlib.sha256(params.encode(shared) + index.to_bytes(4, "big") + bytes([slot])).digest()


def ot_receive_phase1(choices: Sequence[int], rng: np.random.Generator, params: OTParams = DEFAULT_PARAMS):
    choices = tuple(int(s) for s in choices)
    if any(s not in (0, 1) for s in choices):
        raise ProtocolError("choice bits must be 0 or 1")
    P, g, C = gmpy2.mpz(params.prime), gmpy2.mpz(params.generator), gmpy2.mpz(params.public_element)
    ks, elements = [], []
    for s in choices:
        k = params.random_exponent(rng)
        gk = gmpy2.powmod(g, k, P)
        elements.append(int(gk if s == 0 else C * gmpy2.invert(gk, P) % P))
        ks.append(k)
    return OTRequest(tuple(elements)), ReceiverState(choices, tuple(ks))


def ot_send(request: OTRequest, pairs: Sequence[tuple[bytes, bytes]], rng: np.random.Generator,
            params: OTParams = DEFAULT_PARAMS) -> OTResponse:
    if len(request.elements) != len(pairs):
        raise ProtocolError(f"OT request has {len(request.elements)} elements for {len(pairs)} pairs")
    P, g, C = gmpy2.mpz(params.prime), gmpy2.mpz(params.generator), gmpy2.mpz(params.public_element)
    eph, pays = [], []
    for index, (pk0, (m0, m1)) in enumerate(zip(request.elements, pairs)):
        params.check_member(pk0)
        if len(m0) != PAYLOAD_BYTES or len(m1) != PAYLOAD_BYTES:
            raise ProtocolError("OT payloads must be 16 bytes")
        r = params.random_exponent(rng)
        pk0r = gmpy2.powmod(pk0, r, P)
        pk1r = int(gmpy2.powmod(C, r, P) * gmpy2.invert(pk0r, P) % P)
        pk0r = int(pk0r)
        slots = []
        for slot, (shared, m) in enumerate(((pk0r, m0), (pk1r, m1))):
            key = _wrap_key(params, shared, index, slot)
            pad, tag = key[:PAYLOAD_BYTES], key[PAYLOAD_BYTES:]
            slots.append(bytes(x ^ y for x, y in zip(m, pad)) + tag)
        eph.append(int(gmpy2.powmod(g, r, P)))
        pays.append(tuple(slots))
    return OTResponse(tuple(eph), tuple(pays))


def unwrap(response: OTResponse, state: ReceiverState, index: int, slot: int, params: OTParams = DEFAULT_PARAMS) -> bytes:
    """Try to open ``slot`` of transfer ``index``; raises on integrity failure."""
    shared = int(gmpy2.powmod(response.ephemerals[index], state.secrets[index], params.prime))
    key = _wrap_key(params, shared, index, slot)
    blob = response.payloads[index][slot]
    if blob[PAYLOAD_BYTES:] != key[PAYLOAD_BYTES:]:
        raise ProtocolError(f"OT payload {index} slot {slot} failed its integrity check")
    return bytes(x ^ y for x, y in zip(blob[:PAYLOAD_BYTES], key[:PAYLOAD_BYTES]))


def ot_receive_phase2(response: OTResponse, state: ReceiverState, params: OTParams = DEFAULT_PARAMS) -> list[bytes]:
    if state.used:
        raise ProtocolError("OT receiver state is single-use")
    if len(response.ephemerals) != len(state.choices):
        raise ProtocolError("OT response does not match the request batch")
    state.used = True
    return [unwrap(response, state, i, s, params) for i, s in enumerate(state.choices)]
