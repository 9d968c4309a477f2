"""Integer reformulation of max-out controllers.

Real weights and states are scaled and rounded to integers::

    xi = round(s1 * x),  Kq = round(s2 * K),  bq = round(s3 * b),  s3 = s1 * s2

(likewise for L and c), so that ``max(Kq xi + bq) - max(Lq xi + cq)``
approximates ``s3 * g(x)``. This module provides the rounding, the a-priori
error bound, scaling-factor sizing against overflow, and an overflow
certificate over a box-shaped state domain.

All box maximizations use the closed form
``max_{|x_j| <= r_j} |K_i x + b_i| = sum_j |K_ij| r_j + |b_i|``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError, QuantizationOverflow


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class RealNetwork:
    K: np.ndarray
    L: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("K", "L", "b", "c"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        if self.K.ndim != 2 or self.K.shape != self.L.shape:
            raise ContractError(f"K and L must be p x n matrices of equal shape, got {self.K.shape}, {self.L.shape}")
        p = self.K.shape[0]
        if self.b.shape != (p,) or self.c.shape != (p,):
            raise ContractError(f"b and c must have length p={p}")
        if p < 1:
            raise ContractError("p must be positive")
        if not all(np.all(np.isfinite(getattr(self, k))) for k in ("K", "L", "b", "c")):
            raise ContractError("network weights must be finite")

    @property
    def p(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.K.shape[1]

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "n": self.n,
            "K": self.K.tolist(),
            "L": self.L.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RealNetwork":
        try:
            net = cls(doc["K"], doc["L"], doc["b"], doc["c"])
        except KeyError as exc:
            raise ContractError(f"network document lacks field {exc}") from None
        if "p" in doc and doc["p"] != net.p or "n" in doc and doc["n"] != net.n:
            raise ContractError("declared p/n do not match the weight shapes")
        return net


@dataclass(frozen=True)
class QuantizedNetwork:
    """Integer weights (signed, not yet reduced mod q)."""

    Kq: np.ndarray
    Lq: np.ndarray
    bq: np.ndarray
    cq: np.ndarray

    @property
    def p(self) -> int:
        return self.Kq.shape[0]

    @property
    def n(self) -> int:
        return self.Kq.shape[1]

    def preactivations(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """Exact integer preactivations ``v``, ``w`` (Python-int safe)."""
        xi = np.asarray(xi, dtype=object)
        v = self.Kq.astype(object) @ xi + self.bq.astype(object)
        w = self.Lq.astype(object) @ xi + self.cq.astype(object)
        return np.asarray(v, dtype=object), np.asarray(w, dtype=object)

    def evaluate(self, xi) -> int:
        """``max(v) - max(w)`` over the integers."""
        v, w = self.preactivations(xi)
        return int(max(v)) - int(max(w))


@dataclass(frozen=True)
class StateDomain:
    half_widths: np.ndarray

    def __post_init__(self):
        r = np.array(self.half_widths, dtype=np.float64).reshape(-1)
        if r.size == 0 or np.any(~(r > 0)):
            raise ContractError("state domain half-widths must be positive")
        object.__setattr__(self, "half_widths", r)

    @property
    def n(self) -> int:
        return self.half_widths.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return x.shape == self.half_widths.shape and bool(np.all(np.abs(x) <= self.half_widths))


def smallest_eta(net: RealNetwork, dom: StateDomain, s1: float, s2: float) -> float:
    """Least eta with |x|_inf <= eta/(2 s1) and |K|_max, |L|_max <= eta/(2 s2)."""
    return float(max(
        2.0 * s1 * np.max(dom.half_widths),
        2.0 * s2 * np.max(np.abs(net.K)),
        2.0 * s2 * np.max(np.abs(net.L)),
    ))


@dataclass(frozen=True)
class QuantizationConfig:
    s1: float
    s2: float
    l: int
    n: int
    eta: float
    domain: StateDomain | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0):
            raise ContractError("scaling factors must be positive")
        if not 2 <= self.l <= 64:
            raise ContractError("bit width l must lie in [2, 64]")
        if self.eta <= 0:
            raise ContractError("eta must be positive")
        if self.domain is not None and self.domain.n != self.n:
            raise ContractError("domain dimension differs from n")

    @property
    def s3(self) -> float:
        return self.s1 * self.s2

    @property
    def q(self) -> int:
        return 1 << self.l

    @classmethod
    def for_network(cls, net: RealNetwork, dom: StateDomain, s1: float, s2: float, l: int) -> "QuantizationConfig":
        if dom.n != net.n:
            raise ContractError(f"domain has dimension {dom.n}, network expects {net.n}")
        return cls(float(s1), float(s2), int(l), net.n, smallest_eta(net, dom, s1, s2), dom)

    def check_eta(self, net: RealNetwork) -> bool:
        """Whether eta satisfies the assumed bounds for the weights and domain."""
        ok = np.max(np.abs(net.K)) <= self.eta / (2 * self.s2) and np.max(np.abs(net.L)) <= self.eta / (2 * self.s2)
        if self.domain is not None:
            ok = ok and np.max(self.domain.half_widths) <= self.eta / (2 * self.s1)
        return bool(ok)


def _scaled(values, scale, l, what):
    scaled = round_half_away(np.asarray(values, dtype=np.float64) * scale)
    if np.any(np.abs(scaled) >= (1 << (l - 1))):
        raise QuantizationOverflow(f"{what} scaled by {scale:g} exceeds 2**{l - 1}")
    return scaled


def quantize_network(net: RealNetwork, cfg: QuantizationConfig) -> QuantizedNetwork:
    if cfg.n != net.n:
        raise ContractError(f"config is for n={cfg.n}, network has n={net.n}")
    return QuantizedNetwork(
        Kq=_scaled(net.K, cfg.s2, cfg.l, "K"),
        Lq=_scaled(net.L, cfg.s2, cfg.l, "L"),
        bq=_scaled(net.b, cfg.s3, cfg.l, "b"),
        cq=_scaled(net.c, cfg.s3, cfg.l, "c"),
    )


def quantize_state(x, cfg: QuantizationConfig, domain: StateDomain | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    dom = domain if domain is not None else cfg.domain
    if x.shape != (cfg.n,):
        raise ContractError(f"state must have length {cfg.n}")
    if dom is not None and not dom.contains(x):
        raise DomainError(f"state {x.tolist()} lies outside the box {dom.half_widths.tolist()}")
    return round_half_away(cfg.s1 * x)


def error_bound(cfg: QuantizationConfig) -> float:
    """Bound on |g(x) - (max v - max w)/s3|."""
    return (cfg.n * cfg.eta + cfg.n / 2 + 1) / cfg.s3


def delta_bound(cfg: QuantizationConfig) -> float:
    """Per-branch preactivation error bound, half of :func:`error_bound`."""
    return error_bound(cfg) / 2


def quantized_eval(netq: QuantizedNetwork, x, cfg: QuantizationConfig, domain: StateDomain | None = None) -> float:
    """Plaintext integer pipeline mapped back to the real scale."""
    return netq.evaluate(quantize_state(x, cfg, domain)) / cfg.s3


def box_row_bounds(W, o, r) -> np.ndarray:
    """Per-row max of |W_i x + o_i| over the box |x_j| <= r_j."""
    W = np.asarray(W, dtype=np.float64)
    return np.abs(W) @ np.asarray(r, dtype=np.float64) + np.abs(np.asarray(o, dtype=np.float64))


def preactivation_bound(net: RealNetwork, dom: StateDomain) -> float:
    """max over the box and both branches of |Kx+b|_inf and |Lx+c|_inf."""
    r = dom.half_widths
    return float(max(box_row_bounds(net.K, net.b, r).max(), box_row_bounds(net.L, net.c, r).max()))


def s3_max(net: RealNetwork, dom: StateDomain, l: int, delta_cap: float = 1.0) -> float:
    if delta_cap <= 0:
        raise ContractError("delta_cap must be positive")
    return 2.0 ** (l - 1) / (preactivation_bound(net, dom) + delta_cap)


@dataclass
class OverflowCertificate:
    """Outcome of :func:`certify_no_overflow`.

    ``ok`` covers the preactivations. ``differences_ok`` additionally covers
    every pairwise difference within a branch, which the l-bit sign-bit
    comparator needs. ``output_ok`` covers ``max v - max w`` as decoded by the
    actuator.
    """

    ok: bool
    differences_ok: bool
    output_ok: bool
    limit: int
    preactivation_bound: int
    difference_bound: int
    output_bound: int
    violations: list = field(default_factory=list)
    difference_violations: list = field(default_factory=list)

    @property
    def margin(self) -> int:
        return self.limit - self.preactivation_bound

    def summary(self) -> str:
        lines = [
            f"preactivations: {'ok' if self.ok else 'VIOLATED'} (bound {self.preactivation_bound}, limit {self.limit}, margin {self.margin})",
            f"pairwise differences: {'ok' if self.differences_ok else 'exceed Z_q'} (bound {self.difference_bound})",
            f"actuator difference: {'ok' if self.output_ok else 'exceeds Z_q'} (bound {self.output_bound})",
        ]
        for branch, row, attained in self.violations:
            lines.append(f"  violation: branch {branch} row {row} attains {attained}")
        return "\n".join(lines)


def certify_no_overflow(netq: QuantizedNetwork, dom: StateDomain, cfg: QuantizationConfig) -> OverflowCertificate:
    # Every quantized state of the box satisfies |xi_j| <= round(s1 r_j).
    xi_max = round_half_away(cfg.s1 * dom.half_widths).astype(object)
    limit = (1 << (cfg.l - 1)) - 1

    def row_bounds(W, o):
        W = np.asarray(W).astype(object)
        o = np.asarray(o).astype(object)
        return [int(sum(abs(w) * r for w, r in zip(W[i], xi_max)) + abs(o[i])) for i in range(W.shape[0])]

    violations, diff_violations = [], []
    pre_bound = diff_bound = 0
    lo_hi = {}
    for branch, (W, o) in (("v", (netq.Kq, netq.bq)), ("w", (netq.Lq, netq.cq))):
        bounds = row_bounds(W, o)
        for i, m in enumerate(bounds):
            pre_bound = max(pre_bound, m)
            if m > limit:
                violations.append((branch, i, m))
        p = W.shape[0]
        for i in range(p):
            for j in range(i + 1, p):
                d = row_bounds(W[i : i + 1] - W[j : j + 1], o[i : i + 1] - o[j : j + 1])[0]
                diff_bound = max(diff_bound, d)
                if d > limit:
                    diff_violations.append((branch, i, j, d))
        spread = [m - abs(int(oi)) for m, oi in zip(bounds, o)]
        lows = [int(oi) - s for oi, s in zip(o, spread)]
        highs = [int(oi) + s for oi, s in zip(o, spread)]
        lo_hi[branch] = (max(lows), max(highs))
    out_bound = max(abs(lo_hi["v"][1] - lo_hi["w"][0]), abs(lo_hi["v"][0] - lo_hi["w"][1]))
    return OverflowCertificate(
        ok=not violations,
        differences_ok=not diff_violations,
        output_ok=out_bound <= limit,
        limit=limit,
        preactivation_bound=pre_bound,
        difference_bound=diff_bound,
        output_bound=out_bound,
        violations=violations,
        difference_violations=diff_violations,
    )


def load_document(path) -> dict:
    return json.loads(Path(path).read_text())


def load_network(path) -> RealNetwork:
    return RealNetwork.from_dict(load_document(path))


def config_from_document(doc: dict, net: RealNetwork, dom: StateDomain) -> QuantizationConfig:
    try:
        return QuantizationConfig.for_network(net, dom, doc["s1"], doc["s2"], doc["l"])
    except KeyError as exc:
        raise ContractError(f"config document lacks field {exc}") from None
