"""Two-party additive secret sharing over Z_q.

A secret ``z`` is held as ``z1 + z2 = z (mod q)``; each party only ever sees
its own :class:`ShareArray`. Public constants enter party 1's share only.
Elementwise products of two shared matrices use matrix-valued Beaver triples
``A o B = C (mod q)`` handed out by a trusted dealer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import ring
from .errors import ContractError, ProtocolError

PARTIES = (1, 2)


@dataclass(frozen=True)
class ShareArray:
    """One party's share of a vector or matrix secret."""

    party: int
    values: np.ndarray
    l: int

    def __post_init__(self):
        if self.party not in PARTIES:
            raise ContractError(f"party index must be 1 or 2, got {self.party}")
        vals = np.array(self.values, dtype=np.uint64)
        if np.any(vals > ring.mask(self.l)):
            raise ContractError("share entries must lie in N_q")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self):
        return self.values.shape

    def _peer_check(self, other: "ShareArray"):
        if other.party != self.party:
            raise ContractError("cannot combine shares held by different parties locally")
        if other.l != self.l or other.shape != self.shape:
            raise ContractError(f"share mismatch: {self.shape}/l={self.l} vs {other.shape}/l={other.l}")

    def __add__(self, other: "ShareArray") -> "ShareArray":
        self._peer_check(other)
        return ShareArray(self.party, (self.values + other.values) & ring.mask(self.l), self.l)

    def __sub__(self, other: "ShareArray") -> "ShareArray":
        self._peer_check(other)
        return ShareArray(self.party, (self.values - other.values) & ring.mask(self.l), self.l)


def share(z, rng: np.random.Generator, l: int) -> tuple[ShareArray, ShareArray]:
    """Split ``z`` (signed ints or residues, scalar or array) into two shares."""
    secret = ring.reduce_array(z, l)
    first = ring.random_residues(rng, secret.shape, l)
    with np.errstate(over="ignore"):  # 0-d operands take numpy's scalar path, which warns on wraparound
        second = (secret - first) & ring.mask(l)
    return ShareArray(1, first, l), ShareArray(2, second, l)


def reconstruct(a: ShareArray, b: ShareArray) -> np.ndarray:
    """``mu(a + b mod q)``; returns int64 of the shares' shape."""
    if {a.party, b.party} != set(PARTIES):
        raise ContractError("reconstruction needs one share from each party")
    if a.l != b.l or a.shape != b.shape:
        raise ContractError("shares do not belong to the same secret")
    return ring.mu_array((a.values + b.values) & ring.mask(a.l), a.l)


def add_shares(x: ShareArray, y: ShareArray) -> ShareArray:
    return x + y


def affine_public(x: ShareArray, a=1, b=0) -> ShareArray:
    """Share of ``a*z + b`` from a share of ``z``; ``b`` lands on party 1 only."""
    av = ring.reduce_array(a, x.l)
    bv = ring.reduce_array(b, x.l)
    try:
        out = (av * x.values) & ring.mask(x.l)
        if x.party == 1:
            out = (out + bv) & ring.mask(x.l)
    except ValueError as exc:
        raise ContractError(f"shape mismatch in affine operation: {exc}") from None
    if out.shape != x.shape:
        raise ContractError(f"public operands broadcast {x.shape} to {out.shape}")
    return ShareArray(x.party, out, x.l)


_FRESH, _OPENED, _SPENT = "fresh", "opened", "spent"


@dataclass
class BeaverTripleMatrix:
    """One party's share of a matrix triple. Single use: open once, finish once."""

    party: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    l: int
    triple_id: int = 0
    state: str = field(default=_FRESH)

    @property
    def shape(self):
        return self.A.shape

    def _advance(self, expected: str, new: str):
        if self.state != expected:
            raise ProtocolError(f"Beaver triple {self.triple_id} reused (state {self.state})")
        self.state = new


@dataclass(frozen=True)
class OpenedValue:
    """Either one party's contribution to D, E or, once combined, the public D, E."""

    D: np.ndarray
    E: np.ndarray


def deal_triples(shape, count: int, rng: np.random.Generator, l: int, first_id: int = 0):
    """Trusted-dealer triples: ``count`` per party, ids ``first_id, first_id+1, ...``."""
    one, two = [], []
    m = ring.mask(l)
    for k in range(count):
        A = ring.random_residues(rng, shape, l)
        B = ring.random_residues(rng, shape, l)
        C = (A * B) & m
        a1, a2 = share(A, rng, l)
        b1, b2 = share(B, rng, l)
        c1, c2 = share(C, rng, l)
        tid = first_id + k
        one.append(BeaverTripleMatrix(1, a1.values, b1.values, c1.values, l, tid))
        two.append(BeaverTripleMatrix(2, a2.values, b2.values, c2.values, l, tid))
    return one, two


def state_matrix(xi_share: ShareArray, p: int) -> ShareArray:
    """Stack a length-n state share into the p x n matrix Xi."""
    if xi_share.values.ndim != 1:
        raise ContractError("state share must be a vector")
    return ShareArray(xi_share.party, np.tile(xi_share.values, (p, 1)), xi_share.l)


def beaver_open(K_share: ShareArray, X_share: ShareArray, triple: BeaverTripleMatrix) -> OpenedValue:
    """This party's shares of D = K - A and E = X - B."""
    if K_share.party != triple.party or X_share.party != triple.party:
        raise ContractError("shares and triple belong to different parties")
    if K_share.shape != triple.shape or X_share.shape != triple.shape or K_share.l != triple.l:
        raise ContractError(f"shape mismatch: K {K_share.shape}, Xi {X_share.shape}, triple {triple.shape}")
    triple._advance(_FRESH, _OPENED)
    m = ring.mask(triple.l)
    return OpenedValue((K_share.values - triple.A) & m, (X_share.values - triple.B) & m)


def combine_opened(mine: OpenedValue, theirs: OpenedValue, l: int) -> OpenedValue:
    if mine.D.shape != theirs.D.shape or mine.E.shape != theirs.E.shape:
        raise ContractError("opened contributions differ in shape")
    m = ring.mask(l)
    return OpenedValue((mine.D + theirs.D) & m, (mine.E + theirs.E) & m)


def preactivation_shares(opened: OpenedValue, triple: BeaverTripleMatrix, beta_share: ShareArray) -> ShareArray:
    """``(C + D o B + E o A + D o E) 1 + beta`` for this party (D o E on party 1 only)."""
    if opened.D.shape != triple.shape or opened.E.shape != triple.shape:
        raise ContractError("opened values do not match the triple shape")
    if beta_share.party != triple.party or beta_share.shape != (triple.shape[0],):
        raise ContractError("offset share does not match the triple")
    triple._advance(_OPENED, _SPENT)
    m = ring.mask(triple.l)
    prod = (triple.C + opened.D * triple.B + opened.E * triple.A) & m
    if triple.party == 1:
        prod = (prod + opened.D * opened.E) & m
    v = (prod.sum(axis=1, dtype=np.uint64) + beta_share.values) & m
    return ShareArray(triple.party, v, triple.l)


# -- share files ---------------------------------------------------------------

SHARE_MAGIC = b"GMSH"
SHARE_VERSION = 1
_HEADER = struct.Struct("<4sBBHHB")


@dataclass(frozen=True)
class ShareBundle:
    """One cloud's shares of Kq, Lq, bq, cq."""

    party: int
    l: int
    K: ShareArray
    L: ShareArray
    b: ShareArray
    c: ShareArray

    @property
    def p(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.K.shape[1]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(SHARE_MAGIC, SHARE_VERSION, self.l, self.p, self.n, self.party)
        return head + b"".join(ring.array_to_bytes(s.values, self.l) for s in (self.K, self.L, self.b, self.c))

    @classmethod
    def from_bytes(cls, data: bytes) -> "ShareBundle":
        if len(data) < _HEADER.size:
            raise ContractError("share file truncated")
        magic, version, l, p, n, party = _HEADER.unpack_from(data)
        if magic != SHARE_MAGIC or version != SHARE_VERSION:
            raise ContractError("not a share file (bad magic or version)")
        size = ring.element_size(l)
        off = _HEADER.size
        parts = []
        for shape in ((p, n), (p, n), (p,), (p,)):
            count = int(np.prod(shape))
            chunk = data[off : off + count * size]
            parts.append(ShareArray(party, ring.array_from_bytes(chunk, l, shape), l))
            off += count * size
        if off != len(data):
            raise ContractError("trailing bytes in share file")
        return cls(party, l, *parts)


def recombine_bundles(one: ShareBundle, two: ShareBundle) -> dict:
    """Signed integer weights recovered from both bundles (testing aid)."""
    return {k: reconstruct(getattr(one, k), getattr(two, k)) for k in ("K", "L", "b", "c")}

