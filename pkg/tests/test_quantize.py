import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from garbled_maxout.errors import ContractError, DomainError, QuantizationOverflow
from garbled_maxout.plant import DOUBLE_INTEGRATOR_BOX, fixture_paper_p8, fixture_saturated_feedback, maxout_eval, sample_states
from garbled_maxout.quantize import (
    QuantizationConfig,
    RealNetwork,
    StateDomain,
    certify_no_overflow,
    config_from_document,
    delta_bound,
    error_bound,
    load_network,
    preactivation_bound,
    quantize_network,
    quantize_state,
    quantized_eval,
    round_half_away,
    s3_max,
    smallest_eta,
)

PAPER_NET = fixture_paper_p8().network
BOX = DOUBLE_INTEGRATOR_BOX

# Box maximum of |Kx+b|, |Lx+c| for the p = 8 weights, frozen from the LP oracle below.
PAPER_BOX_MAX = 14.16


def p8_cfg(l=16, s1=20, s2=100):
    return QuantizationConfig.for_network(PAPER_NET, BOX, s1, s2, l)


def lp_box_max(W, o, r):
    """Independent oracle: maximize +-(W_i x + o_i) over the box with an LP solver."""
    best = 0.0
    bounds = [(-ri, ri) for ri in r]
    for Wi, oi in zip(np.asarray(W), np.asarray(o)):
        for sign in (1, -1):
            res = linprog(-sign * Wi, bounds=bounds, method="highs")
            best = max(best, -res.fun + sign * oi)
    return best


def test_round_half_away():
    assert round_half_away(np.array([0.5, -0.5, 1.5, -2.5, 0.49])).tolist() == [1, -1, 2, -3, 0]


def test_quantize_network_examples():
    cfg = p8_cfg()
    netq = quantize_network(PAPER_NET, cfg)
    assert netq.Kq[0, 0] == -7
    assert netq.bq[1] == 9200
    assert cfg.s3 == 2000.0
    zero = RealNetwork(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(3), np.zeros(3))
    zq = quantize_network(zero, cfg)
    assert not np.any(zq.Kq) and not np.any(zq.bq)


def test_quantize_network_overflow():
    net = RealNetwork([[400.0, 0.0]], [[0.0, 0.0]], [0.0], [0.0])
    with pytest.raises(QuantizationOverflow):
        quantize_network(net, QuantizationConfig.for_network(net, BOX, 20, 100, 16))


def test_quantize_state_examples():
    cfg = p8_cfg()
    assert quantize_state([0, 0], cfg).tolist() == [0, 0]
    assert quantize_state([1.26, -0.07], cfg).tolist() == [25, -1]
    assert quantize_state([25, 5], cfg).tolist() == [500, 100]
    with pytest.raises(DomainError):
        quantize_state([25.01, 0], cfg)
    with pytest.raises(ContractError):
        quantize_state([1, 2, 3], cfg)


def test_error_bound_examples():
    cfg = QuantizationConfig(1.0, 1.0, 16, 2, 1e-300)
    assert error_bound(cfg) == pytest.approx(2.0)
    cfg = p8_cfg()
    assert cfg.eta == 1000.0
    assert error_bound(cfg) == pytest.approx(2002 / 2000)
    assert delta_bound(cfg) == pytest.approx(2002 / 4000)
    doubled = QuantizationConfig(cfg.s1, 2 * cfg.s2, cfg.l, cfg.n, cfg.eta)
    assert error_bound(doubled) == pytest.approx(error_bound(cfg) / 2)


def test_smallest_eta_satisfies_assumed_bounds():
    for s1, s2 in [(20, 100), (1, 1000), (50, 10)]:
        cfg = p8_cfg(s1=s1, s2=s2)
        assert cfg.eta == smallest_eta(PAPER_NET, BOX, s1, s2)
        assert cfg.check_eta(PAPER_NET)
        tighter = QuantizationConfig(cfg.s1, cfg.s2, cfg.l, cfg.n, cfg.eta * 0.99, BOX)
        assert not tighter.check_eta(PAPER_NET)


def test_s3_max_toy():
    net = RealNetwork([[1.0, 0.0]], [[1.0, 0.0]], [0.0], [0.0])
    assert s3_max(net, StateDomain(np.array([1.0, 1.0])), 4, 1.0) == 4.0


def test_preactivation_bound_matches_lp_oracle():
    oracle = max(lp_box_max(PAPER_NET.K, PAPER_NET.b, BOX.half_widths),
                 lp_box_max(PAPER_NET.L, PAPER_NET.c, BOX.half_widths))
    assert oracle == pytest.approx(PAPER_BOX_MAX, abs=1e-9)
    assert preactivation_bound(PAPER_NET, BOX) == pytest.approx(PAPER_BOX_MAX, abs=1e-12)


def test_s3_max_printed_weights():
    v16 = s3_max(PAPER_NET, BOX, 16)
    assert v16 == pytest.approx(2**15 / (PAPER_BOX_MAX + 1))
    assert 2.23e3 / 3 <= v16 <= 2.23e3
    assert s3_max(PAPER_NET, BOX, 32) / v16 == 2**16


def test_s3_max_monotone():
    vals = [s3_max(PAPER_NET, BOX, l) for l in (8, 12, 16, 32)]
    assert vals == sorted(vals)
    caps = [s3_max(PAPER_NET, BOX, 16, d) for d in (0.1, 1.0, 5.0)]
    assert caps == sorted(caps, reverse=True)


def test_certificate_p8_config():
    cfg = p8_cfg()
    cert = certify_no_overflow(quantize_network(PAPER_NET, cfg), BOX, cfg)
    assert cert.ok and cert.margin > 0
    assert cert.preactivation_bound == 28320
    # Pairwise differences leave Z_q, so only the widened comparator is exact here.
    assert not cert.differences_ok and cert.difference_bound == 46220
    assert cert.output_ok
    assert "preactivations: ok" in cert.summary()


def test_certificate_violation_above_s3_max():
    cfg = p8_cfg(s1=40)
    assert cfg.s3 > s3_max(PAPER_NET, BOX, 16)
    cert = certify_no_overflow(quantize_network(PAPER_NET, cfg), BOX, cfg)
    assert not cert.ok
    branch, row, attained = cert.violations[0]
    assert branch in ("v", "w") and attained > cert.limit
    assert "violation: branch" in cert.summary()


def test_certificate_zero_network():
    zero = RealNetwork(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.zeros(2))
    cfg = QuantizationConfig.for_network(zero, BOX, 20, 100, 16)
    cert = certify_no_overflow(quantize_network(zero, cfg), BOX, cfg)
    assert cert.ok and cert.differences_ok and cert.preactivation_bound == 0


def test_certificate_is_sound_on_samples():
    cfg = p8_cfg()
    netq = quantize_network(PAPER_NET, cfg)
    cert = certify_no_overflow(netq, BOX, cfg)
    corners = np.array([[sx * 25, sy * 5] for sx in (-1, 1) for sy in (-1, 1)])
    X = np.vstack([sample_states(BOX, 2000, 1), corners])
    for x in X:
        v, w = netq.preactivations(quantize_state(x, cfg))
        assert max(abs(int(z)) for z in (*v, *w)) <= cert.preactivation_bound


@pytest.mark.parametrize("fixture", [fixture_paper_p8, fixture_saturated_feedback])
@pytest.mark.parametrize("l", [16, 32])
def test_prop1_pointwise(fixture, l):
    net = fixture().network
    cfg = QuantizationConfig.for_network(net, BOX, 20, 100, l)
    netq = quantize_network(net, cfg)
    bound = error_bound(cfg)
    for x in sample_states(BOX, 1000, seed=l):
        assert abs(maxout_eval(net, x) - quantized_eval(netq, x, cfg)) <= bound


@given(st.floats(-25, 25), st.floats(-5, 5), st.sampled_from([1.0, 20.0, 333.3]))
def test_rounding_residuals(x1, x2, s1):
    cfg = QuantizationConfig.for_network(PAPER_NET, BOX, s1, 100, 32)
    x = np.array([x1, x2])
    xi = quantize_state(x, cfg)
    assert np.max(np.abs(x - xi / s1)) <= 1 / (2 * s1) + 1e-12
    netq = quantize_network(PAPER_NET, cfg)
    assert np.max(np.abs(PAPER_NET.K - netq.Kq / cfg.s2)) <= 1 / (2 * cfg.s2) + 1e-12
    assert np.max(np.abs(PAPER_NET.b - netq.bq / cfg.s3)) <= 1 / (2 * cfg.s3) + 1e-12


def test_network_validation():
    with pytest.raises(ContractError):
        RealNetwork([[1.0, 2.0]], [[1.0]], [0.0], [0.0])
    with pytest.raises(ContractError):
        RealNetwork([[1.0, np.nan]], [[1.0, 0.0]], [0.0], [0.0])
    with pytest.raises(ContractError):
        StateDomain(np.array([1.0, 0.0]))
    with pytest.raises(ContractError):
        QuantizationConfig(0.0, 1.0, 16, 2, 1.0)


def test_document_round_trip(tmp_path):
    doc = PAPER_NET.to_dict() | {"s1": 20, "s2": 100, "l": 16}
    path = tmp_path / "net.json"
    import json

    path.write_text(json.dumps(doc))
    net = load_network(path)
    assert np.array_equal(net.K, PAPER_NET.K)
    cfg = config_from_document(doc, net, BOX)
    assert (cfg.s1, cfg.s2, cfg.l) == (20.0, 100.0, 16)
    with pytest.raises(ContractError):
        config_from_document({"s1": 1}, net, BOX)
