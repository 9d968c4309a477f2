"""Self-check suites run by ``garbled-maxout verify``.

Each check returns a :class:`CheckResult`; a suite is a list of checks run in
order. The small suite uses sampled instances where the full one is
exhaustive.
"""

from __future__ import annotations

import hashlib
import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ring
from .circuit import (
    PAPER_EXACT,
    SAFE_SIGN,
    CircuitBuilder,
    GARBLER,
    EVALUATOR,
    NeuronCircuitSpec,
    build_adder,
    build_neuron_circuit,
    evaluate_plaintext,
    neuron_assignment,
    neuron_oracle,
    output_value,
)
from .errors import EvaluationError, GarbledMaxoutError
from .garble import decode_outputs, evaluate_garbled, garble, kdf
from .ot import TEST_PARAMS, ot_receive_phase1, ot_receive_phase2, ot_send
from .plant import DOUBLE_INTEGRATOR_BOX, FIXTURES, maxout_eval_batch, sample_states
from .protocol import Session, offline_setup, plaintext_reference
from .quantize import QuantizationConfig, error_bound, quantize_network, round_half_away
from .shares import (
    beaver_open,
    combine_opened,
    deal_triples,
    preactivation_shares,
    reconstruct,
    share,
    state_matrix,
)

PAPER_AND_COUNTS = {(8, 16): 480, (8, 32): 960, (16, 16): 992, (16, 32): 1984}
SUITES = ("small", "full")


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<28} {self.detail} ({self.seconds:.2f} s)"


def tampered_kdf(a: int, b: int, gate_index: int) -> int:
    """KDF with a flipped domain constant, for fault injection."""
    digest = hashlib.sha256(b"\x01" + a.to_bytes(16, "big") + b.to_bytes(16, "big") + gate_index.to_bytes(4, "big"))
    return int.from_bytes(digest.digest()[:16], "big")


def fixture_config(name: str, l: int = 16, s1: float = 20, s2: float = 100):
    net = FIXTURES[name]().network
    cfg = QuantizationConfig.for_network(net, DOUBLE_INTEGRATOR_BOX, s1, s2, l)
    return net, cfg, quantize_network(net, cfg)


def check_ring(full: bool) -> str:
    l = 3
    for a in range(8):
        m = ring.mu(ring.RingElement(a, l)).value
        assert m == (a - 8 if a >= 4 else a), f"mu({a})"
        assert ring.lift(m, l).value == a
    b = CircuitBuilder()
    x = b.word(GARBLER, "x", l)
    y = b.word(EVALUATOR, "y", l)
    c = b.build(build_adder(b, x, y))
    for (u, v), want in (((3, 6), 1), ((5, 2), -1)):
        inputs = {w: (u >> j) & 1 for j, w in enumerate(x)} | {w: (v >> j) & 1 for j, w in enumerate(y)}
        got = ring.mu(ring.RingElement(output_value(evaluate_plaintext(c, inputs)), l)).value
        assert got == want, f"{u}+{v} gave {got}"
    return "mu table and worked adder examples at l=3"


def check_gate_counts(full: bool) -> str:
    for (p, l), want in PAPER_AND_COUNTS.items():
        got = build_neuron_circuit(NeuronCircuitSpec(p, l, PAPER_EXACT)).and_count
        assert got == want, f"p={p} l={l}: {got} AND gates, expected {want}"
    for p in range(1, 10 if full else 6):
        for l in (3, 8):
            for mode in (PAPER_EXACT, SAFE_SIGN):
                if mode == PAPER_EXACT and p & (p - 1):
                    continue
                spec = NeuronCircuitSpec(p, l, mode)
                assert build_neuron_circuit(spec).and_count == spec.expected_and_count(), str(spec)
    return "480/960/992/1984 and closed forms"


def _all_inputs_p2_l3():
    grid = np.array(list(itertools.product(range(8), repeat=5)), dtype=np.int64)
    return grid[:, 0:2], grid[:, 2:4], grid[:, 4]


def check_neuron_oracle(full: bool) -> str:
    l = 3
    g, e, r = _all_inputs_p2_l3()
    want = np.array([neuron_oracle(gi, ei, ri, l) for gi, ei, ri in zip(g, e, r)])
    c = build_neuron_circuit(NeuronCircuitSpec(2, l, SAFE_SIGN))
    got = output_value(evaluate_plaintext(c, neuron_assignment(c, g.T, r, e.T, l)))
    bad = int(np.count_nonzero(got != want))
    assert bad == 0, f"safe_sign differs from the oracle on {bad} of {len(r)} inputs"
    c = build_neuron_circuit(NeuronCircuitSpec(2, l, PAPER_EXACT))
    signed = ring.mu_array(ring.reduce_array(g + e, l), l)
    fits = np.abs(signed[:, 0] - signed[:, 1]) < 4
    got = output_value(evaluate_plaintext(c, neuron_assignment(c, g.T, r, e.T, l)))
    bad = int(np.count_nonzero((got != want) & fits))
    assert bad == 0, f"paper_exact differs on {bad} inputs whose difference fits Z_q"
    return f"all {len(r)} inputs (safe_sign), {int(fits.sum())} fitting inputs (paper_exact)"


def check_garble_differential(full: bool, kdf_for_garbling: Callable = kdf) -> str:
    l = 3
    g, e, r = _all_inputs_p2_l3()
    rng = np.random.default_rng(7)
    if not full:
        pick = rng.choice(len(r), 1024, replace=False)
        g, e, r = g[pick], e[pick], r[pick]
    c = build_neuron_circuit(NeuronCircuitSpec(2, l, SAFE_SIGN))
    want = output_value(evaluate_plaintext(c, neuron_assignment(c, g.T, r, e.T, l)))
    gc = enc = dec = None
    for k in range(len(r)):
        if k % 256 == 0:
            gc, enc, dec = garble(c, rng, l=l, p=2, kdf=kdf_for_garbling)
        bits = neuron_assignment(c, g[k], r[k], e[k], l)
        active = {w: enc.active(w, int(bit)) for w, bit in bits.items()}
        active[c.const_zero] = enc.active(c.const_zero, 0)
        try:
            got = ring.int_of_bits(decode_outputs(evaluate_garbled(gc, active), dec))
        except EvaluationError as exc:
            raise AssertionError(f"garbled evaluation failed on input {k}: {exc}") from None
        assert got == want[k], f"garbled output {got} differs from plaintext {want[k]} on input {k}"
    return f"{len(r)} inputs agree with plaintext evaluation"


def check_prop1(full: bool) -> str:
    count = 1000 if full else 200
    worst = 0.0
    for name in FIXTURES:
        for l in (16, 32):
            net, cfg, netq = fixture_config(name, l)
            X = sample_states(DOUBLE_INTEGRATOR_BOX, count, seed=l)
            real = maxout_eval_batch(net, X)
            ints = np.array([netq.evaluate(xi) for xi in round_half_away(cfg.s1 * X)], dtype=np.float64) / cfg.s3
            err = np.abs(real - ints)
            bound = error_bound(cfg)
            assert np.all(err <= bound), f"{name} l={l}: {int(np.sum(err > bound))} bound violations"
            worst = max(worst, float(err.max() / bound))
    return f"{count} states per fixture and width, worst error/bound {worst:.3f}"


def check_beaver(full: bool) -> str:
    rng = np.random.default_rng(11)
    trials = 200 if full else 40
    for l in (8, 16, 32):
        for _ in range(trials // 20):
            p, n = int(rng.integers(1, 9)), int(rng.integers(1, 4))
            K = rng.integers(-50, 50, size=(p, n))
            b = rng.integers(-50, 50, size=p)
            xi = rng.integers(-50, 50, size=n)
            K1, K2 = share(K, rng, l)
            b1, b2 = share(b, rng, l)
            x1, x2 = share(xi, rng, l)
            t1, t2 = deal_triples((p, n), 1, rng, l)
            o1 = beaver_open(K1, state_matrix(x1, p), t1[0])
            o2 = beaver_open(K2, state_matrix(x2, p), t2[0])
            v1 = preactivation_shares(combine_opened(o1, o2, l), t1[0], b1)
            v2 = preactivation_shares(combine_opened(o2, o1, l), t2[0], b2)
            want = ring.mu_array(ring.reduce_array(K @ xi + b, l), l)
            assert np.array_equal(reconstruct(v1, v2), want), f"Beaver product wrong at l={l}"
    return "shared K xi + b reconstructs mod q at l=8,16,32"


def check_ot(full: bool) -> str:
    rng = np.random.default_rng(13)
    count = 64 if full else 16
    pairs = [(rng.bytes(16), rng.bytes(16)) for _ in range(count)]
    choices = rng.integers(0, 2, size=count).tolist()
    req, st = ot_receive_phase1(choices, rng, TEST_PARAMS)
    got = ot_receive_phase2(ot_send(req, pairs, rng, TEST_PARAMS), st, TEST_PARAMS)
    assert got == [pair[s] for pair, s in zip(pairs, choices)], "OT delivered a wrong message"
    return f"{count} transfers in the test group"


def check_protocol(full: bool, fixture: str = "saturated", mode: str = "auto") -> str:
    _, cfg, netq = fixture_config(fixture)
    bundles = offline_setup(netq, cfg, seed=5, mode=mode, ot_group=TEST_PARAMS.name)
    steps = 20 if full else 5
    with Session(bundles) as session:
        for x in sample_states(DOUBLE_INTEGRATOR_BOX, steps, seed=17):
            u, _ = session.run_timestep(x)
            want = plaintext_reference(netq, x, session.config)
            assert u == want, f"protocol u={u} differs from plaintext {want} at x={x.tolist()}"
    return f"{steps} steps of {fixture} ({bundles[0].session.mode}) match the integer pipeline"


def run_suite(suite: str = "small", fault: str | None = None, fixture: str = "saturated", mode: str = "auto",
              report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    full = suite == "full"
    garbling_kdf = tampered_kdf if fault == "kdf" else kdf
    checks = [
        ("ring", lambda: check_ring(full)),
        ("gate-counts", lambda: check_gate_counts(full)),
        ("neuron-oracle", lambda: check_neuron_oracle(full)),
        ("garble-differential", lambda: check_garble_differential(full, garbling_kdf)),
        ("prop1-bound", lambda: check_prop1(full)),
        ("beaver", lambda: check_beaver(full)),
        ("oblivious-transfer", lambda: check_ot(full)),
        ("protocol-exactness", lambda: check_protocol(full, fixture, mode)),
    ]
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            res = CheckResult(name, True, fn())
        except (AssertionError, GarbledMaxoutError) as exc:
            res = CheckResult(name, False, str(exc))
        res = CheckResult(res.name, res.ok, res.detail, time.perf_counter() - t0)
        results.append(res)
        if report is not None:
            report(res)
    return results
