"""Boolean circuits for the garbled max-out neuron.

Words are lists of wire ids, least significant bit first. The neuron circuit
adds the two shares of every preactivation with a ripple-carry adder (carry
out dropped, which is the reduction mod 2**l), reads the sum as a two's
complement number (no gates), runs a max tournament, and adds the garbler's
mask ``r``. In ``paper_exact`` mode it uses exactly ``(4p - 2) * l`` AND gates:

* ``p * l`` for the share additions (one AND per full adder),
* ``3 * l`` per comparator (an l-bit subtraction plus the 2-AND multiplexer
  per bit), ``p - 1`` comparators,
* ``l`` for adding the mask.

``safe_sign`` mode sign-extends the comparator subtraction to ``l + 1`` bits
so the sign bit is correct even when the difference of two entries leaves
Z_q. It costs ``p - 1`` extra AND gates and accepts any ``p >= 1``.

Carry-in constants come from a single garbler-supplied wire fixed to 0 (and
its NOT), so constant full adders still cost one AND each.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import BuildError, EvaluationError

AND, XOR, NOT = "AND", "XOR", "NOT"
PAPER_EXACT, SAFE_SIGN = "paper_exact", "safe_sign"
MODES = (PAPER_EXACT, SAFE_SIGN)
GARBLER, EVALUATOR = "garbler", "evaluator"


class Gate(NamedTuple):
    kind: str
    a: int
    b: int  # -1 for NOT
    out: int


@dataclass(frozen=True)
class Circuit:
    wire_count: int
    gates: tuple[Gate, ...]
    garbler_inputs: tuple[tuple[object, int], ...]
    evaluator_inputs: tuple[tuple[object, int], ...]
    outputs: tuple[int, ...]
    const_zero: int | None = None

    def count(self, kind: str) -> int:
        return sum(1 for g in self.gates if g.kind == kind)

    @property
    def and_count(self) -> int:
        return self.count(AND)

    @property
    def xor_count(self) -> int:
        return self.count(XOR)

    @property
    def not_count(self) -> int:
        return self.count(NOT)

    @property
    def input_wires(self) -> list[int]:
        wires = [w for _, w in self.garbler_inputs] + [w for _, w in self.evaluator_inputs]
        if self.const_zero is not None:
            wires.append(self.const_zero)
        return wires

    def digest(self) -> bytes:
        return hashlib.sha256(export_netlist(self).encode()).digest()


class CircuitBuilder:
    def __init__(self):
        self.wire_count = 0
        self.gates: list[Gate] = []
        self.garbler_inputs: list[tuple[object, int]] = []
        self.evaluator_inputs: list[tuple[object, int]] = []
        self._zero: int | None = None
        self._one: int | None = None

    def _wire(self) -> int:
        self.wire_count += 1
        return self.wire_count - 1

    def input(self, owner: str, label) -> int:
        w = self._wire()
        if owner == GARBLER:
            self.garbler_inputs.append((label, w))
        elif owner == EVALUATOR:
            self.evaluator_inputs.append((label, w))
        else:
            raise BuildError(f"unknown input owner {owner!r}")
        return w

    def word(self, owner: str, name, width: int) -> list[int]:
        """``width`` input wires labelled ``(*name, j)``, LSB first."""
        name = name if isinstance(name, tuple) else (name,)
        return [self.input(owner, (*name, j)) for j in range(width)]

    def zero(self) -> int:
        if self._zero is None:
            self._zero = self._wire()
        return self._zero

    def one(self) -> int:
        if self._one is None:
            self._one = self.not_(self.zero())
        return self._one

    def _gate(self, kind, a, b=-1) -> int:
        for w in (a, b) if kind != NOT else (a,):
            if not 0 <= w < self.wire_count:
                raise BuildError(f"gate input wire {w} does not exist")
        out = self._wire()
        self.gates.append(Gate(kind, a, b, out))
        return out

    def and_(self, a: int, b: int) -> int:
        return self._gate(AND, a, b)

    def xor(self, a: int, b: int) -> int:
        return self._gate(XOR, a, b)

    def not_(self, a: int) -> int:
        return self._gate(NOT, a)

    def build(self, outputs: Sequence[int]) -> Circuit:
        for w in outputs:
            if not 0 <= w < self.wire_count:
                raise BuildError(f"output wire {w} does not exist")
        return Circuit(
            wire_count=self.wire_count,
            gates=tuple(self.gates),
            garbler_inputs=tuple(self.garbler_inputs),
            evaluator_inputs=tuple(self.evaluator_inputs),
            outputs=tuple(outputs),
            const_zero=self._zero,
        )


def build_full_adder(b: CircuitBuilder, x: int, y: int, cin: int) -> tuple[int, int]:
    """sum = x^y^cin, cout = ((x^cin) & (y^cin)) ^ cin: one AND gate."""
    xc = b.xor(x, cin)
    yc = b.xor(y, cin)
    cout = b.xor(b.and_(xc, yc), cin)
    return b.xor(xc, y), cout


def build_adder(b: CircuitBuilder, x: Sequence[int], y: Sequence[int], cin: int | None = None) -> list[int]:
    """Ripple-carry ``(x + y + cin) mod 2**len(x)``; the final carry is dropped."""
    if len(x) != len(y) or not x:
        raise BuildError(f"adder operands must have equal nonzero width, got {len(x)} and {len(y)}")
    carry = b.zero() if cin is None else cin
    out = []
    for xj, yj in zip(x, y):
        s, carry = build_full_adder(b, xj, yj, carry)
        out.append(s)
    return out


def build_subtractor(b: CircuitBuilder, x: Sequence[int], y: Sequence[int]) -> list[int]:
    """Two's complement ``x - y = x + NOT(y) + 1``."""
    if len(x) != len(y):
        raise BuildError(f"subtractor operands must have equal width, got {len(x)} and {len(y)}")
    return build_adder(b, x, [b.not_(w) for w in y], b.one())


def as_signed(word: Sequence[int]) -> list[int]:
    """Unsigned-to-signed reinterpretation: the same wires, no gates."""
    return list(word)


def as_unsigned(word: Sequence[int]) -> list[int]:
    return list(word)


def build_max_of_two(b: CircuitBuilder, x: Sequence[int], y: Sequence[int], widen: bool = False) -> list[int]:
    """Signed max, first operand on ties. Sign bit of x - y selects via XOR of two ANDs."""
    if len(x) != len(y):
        raise BuildError("max-of-two operands must have equal width")
    if widen:
        diff = build_subtractor(b, list(x) + [x[-1]], list(y) + [y[-1]])
    else:
        diff = build_subtractor(b, x, y)
    sigma = diff[-1]
    keep_x = b.not_(sigma)
    return [b.xor(b.and_(xj, keep_x), b.and_(yj, sigma)) for xj, yj in zip(x, y)]


@dataclass(frozen=True)
class NeuronCircuitSpec:
    p: int
    l: int
    mode: str = PAPER_EXACT

    def __post_init__(self):
        if self.mode not in MODES:
            raise BuildError(f"unknown circuit mode {self.mode!r}")
        if self.p < 1 or self.l < 1:
            raise BuildError("p and l must be positive")
        if self.mode == PAPER_EXACT and self.p & (self.p - 1):
            raise BuildError(f"paper_exact mode requires p to be a power of two, got {self.p}")

    def expected_and_count(self) -> int:
        comparators = self.p - 1
        per_cmp = 3 * self.l + (1 if self.mode == SAFE_SIGN else 0)
        return self.p * self.l + comparators * per_cmp + self.l


def build_neuron_circuit(spec: NeuronCircuitSpec) -> Circuit:
    """Circuit computing ``(max_i mu(g_i + e_i mod q) + r) mod q``.

    Garbler inputs: the garbler's share words ``("share", i, j)`` then the
    mask ``("r", j)``; evaluator inputs: its share words ``("share", i, j)``.
    """
    p, l = spec.p, spec.l
    b = CircuitBuilder()
    g_words = [b.word(GARBLER, ("share", i), l) for i in range(p)]
    r_word = b.word(GARBLER, "r", l)
    e_words = [b.word(EVALUATOR, ("share", i), l) for i in range(p)]

    entries = [as_signed(build_adder(b, g, e)) for g, e in zip(g_words, e_words)]
    widen = spec.mode == SAFE_SIGN
    while len(entries) > 1:
        nxt = [build_max_of_two(b, entries[k], entries[k + 1], widen) for k in range(0, len(entries) - 1, 2)]
        if len(entries) % 2:
            nxt.append(entries[-1])
        entries = nxt
    out = build_adder(b, as_unsigned(entries[0]), r_word)
    return b.build(out)


def neuron_oracle(garbler_share: Sequence[int], evaluator_share: Sequence[int], r: int, l: int) -> int:
    """Arithmetic reference for the neuron circuit."""
    q = 1 << l
    vals = []
    for g, e in zip(garbler_share, evaluator_share):
        z = (int(g) + int(e)) % q
        vals.append(z - q if z >= q // 2 else z)
    return (max(vals) + int(r)) % q


def neuron_assignment(c: Circuit, garbler_share, r, evaluator_share, l: int) -> dict:
    """Wire assignment for integer (or integer-array) inputs of a neuron circuit."""
    values = {}
    for label, w in c.garbler_inputs:
        word = r if label[0] == "r" else garbler_share[label[1]]
        values[w] = (np.asarray(word) >> label[-1]) & 1
    for label, w in c.evaluator_inputs:
        values[w] = (np.asarray(evaluator_share[label[1]]) >> label[-1]) & 1
    return values


def evaluate_plaintext(c: Circuit, inputs: Mapping[int, object]) -> list:
    """Gate-by-gate evaluation.

    Input values may be 0/1 ints or equally shaped integer arrays (one circuit
    evaluation per element); outputs come back in the same form, LSB first.
    """
    vals: list = [None] * c.wire_count
    for w in c.input_wires:
        if w == c.const_zero:
            vals[w] = 0
            continue
        if w not in inputs:
            raise EvaluationError(f"input wire {w} has no assignment")
        vals[w] = inputs[w]
    for g in c.gates:
        if g.kind == AND:
            vals[g.out] = vals[g.a] & vals[g.b]
        elif g.kind == XOR:
            vals[g.out] = vals[g.a] ^ vals[g.b]
        else:
            vals[g.out] = vals[g.a] ^ 1
    return [vals[w] for w in c.outputs]


def output_value(bits: Sequence) -> object:
    """Integer (or integer array) encoded by LSB-first output bits."""
    total = 0
    for j, bit in enumerate(bits):
        total = total + (np.asarray(bit, dtype=np.int64) << j)
    return total


# -- netlist text format ---------------------------------------------------------

NETLIST_MAGIC = "garbled-maxout-netlist v1"


def _fmt_label(label) -> str:
    if isinstance(label, tuple):
        head, *idx = label
        return str(head) + "".join(f"[{i}]" for i in idx)
    return str(label)


def _parse_label(text: str):
    if "[" not in text:
        return text
    head, rest = text.split("[", 1)
    idx = [int(part) for part in rest.rstrip("]").split("][")]
    return (head, *idx)


def export_netlist(c: Circuit) -> str:
    """Line-oriented netlist.

    Header: magic, counts, garbler and evaluator manifests (``label=wire``),
    constant-zero wire. Body: ``inputs`` line, one gate per line
    (``KIND in1 [in2] out``), ``outputs`` line (LSB first).
    """
    lines = [
        NETLIST_MAGIC,
        f"wires {c.wire_count} gates {len(c.gates)} and {c.and_count} xor {c.xor_count} not {c.not_count}",
        "garbler " + " ".join(f"{_fmt_label(lb)}={w}" for lb, w in c.garbler_inputs),
        "evaluator " + " ".join(f"{_fmt_label(lb)}={w}" for lb, w in c.evaluator_inputs),
        f"const0 {'-' if c.const_zero is None else c.const_zero}",
        "inputs " + " ".join(str(w) for w in c.input_wires),
    ]
    for g in c.gates:
        lines.append(f"{g.kind} {g.a} {g.out}" if g.kind == NOT else f"{g.kind} {g.a} {g.b} {g.out}")
    lines.append("outputs " + " ".join(str(w) for w in c.outputs))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def parse_netlist(text: str) -> Circuit:
    lines = text.splitlines()
    try:
        if lines[0] != NETLIST_MAGIC:
            raise BuildError("not a garbled-maxout netlist")
        counts = lines[1].split()
        wire_count = int(counts[1])

        def manifest(line, key):
            parts = line.split()
            if parts[0] != key:
                raise BuildError(f"expected {key} manifest")
            return tuple((_parse_label(lb), int(w)) for lb, w in (p.rsplit("=", 1) for p in parts[1:]))

        garbler = manifest(lines[2], "garbler")
        evaluator = manifest(lines[3], "evaluator")
        const = lines[4].split()[1]
        gates = []
        for line in lines[6:-1]:
            parts = line.split()
            if parts[0] == NOT:
                gates.append(Gate(NOT, int(parts[1]), -1, int(parts[2])))
            elif parts[0] in (AND, XOR):
                gates.append(Gate(parts[0], int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                raise BuildError(f"unknown gate kind {parts[0]!r}")
        outputs = tuple(int(w) for w in lines[-1].split()[1:])
    except (IndexError, ValueError) as exc:
        raise BuildError(f"malformed netlist: {exc}") from None
    return Circuit(wire_count, tuple(gates), garbler, evaluator, outputs, None if const == "-" else int(const))
