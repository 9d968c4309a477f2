import struct
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from garbled_maxout import ring
from garbled_maxout.circuit import PAPER_EXACT, SAFE_SIGN
from garbled_maxout.errors import ContractError, DomainError, ProtocolError, SetupError
from garbled_maxout.messages import HEADER_BYTES, ProtocolMessage, Tag, frame_length
from garbled_maxout.plant import DOUBLE_INTEGRATOR_BOX, SATURATED_GAIN, fixture_paper_p8, fixture_saturated_feedback, sample_states
from garbled_maxout.protocol import (
    ALPHA,
    BETA,
    DEALER,
    MESSAGES_PER_STEP,
    ProtocolController,
    Session,
    SessionConfig,
    actuator_reconstruct,
    load_bundles,
    offline_setup,
    plaintext_reference,
    save_bundles,
    sensor_step,
)
from garbled_maxout.quantize import QuantizationConfig, QuantizedNetwork, RealNetwork, StateDomain, quantize_network
from garbled_maxout.shares import ShareArray, reconstruct, recombine_bundles
from garbled_maxout.transport import ChannelTimeout, memory_pair, socket_pair, tcp_pair

TEST_GROUP = "qr61-insecure"


def fixture_setup(fixture, l=16, seed=0, mode="auto", **options):
    net = fixture().network
    cfg = QuantizationConfig.for_network(net, DOUBLE_INTEGRATOR_BOX, 20, 100, l)
    netq = quantize_network(net, cfg)
    options.setdefault("ot_group", TEST_GROUP)
    return netq, offline_setup(netq, cfg, seed=seed, mode=mode, **options)


# -- framing -----------------------------------------------------------------------


def test_frame_layout():
    frame = ProtocolMessage(Tag.MASKED_RESULT, 7, 3, b"\xAA\xBB").encode()
    assert frame == struct.pack("<IBII", 11, 9, 7, 3) + b"\xAA\xBB"
    assert HEADER_BYTES == 13
    assert ProtocolMessage.decode(frame) == ProtocolMessage(Tag.MASKED_RESULT, 7, 3, b"\xAA\xBB")
    assert frame_length(frame[:4]) == len(frame)


def test_frame_rejects_garbage():
    frame = ProtocolMessage(Tag.STATE_SHARE, 1, 0, b"x").encode()
    with pytest.raises(ProtocolError):
        ProtocolMessage.decode(frame[:-1])
    with pytest.raises(ProtocolError):
        ProtocolMessage.decode(frame[:4] + b"\x63" + frame[5:])
    with pytest.raises(ProtocolError):
        ProtocolMessage.decode(b"\x00")
    with pytest.raises(ProtocolError):
        frame_length(struct.pack("<I", 2))


# -- transport ---------------------------------------------------------------------


@pytest.mark.parametrize("make", [memory_pair, socket_pair, tcp_pair])
def test_channels_are_ordered(make):
    a, b = make()
    try:
        frames = [ProtocolMessage(Tag.OT_REQUEST, 1, k, bytes(k * 1000)).encode() for k in range(20)]
        for f in frames:
            a.send(f)
        assert [b.recv(2.0) for _ in frames] == frames
        b.send(frames[3])
        assert a.recv(2.0) == frames[3]
    finally:
        a.close()
        b.close()


def test_channel_timeout_and_abort():
    a, b = memory_pair()
    with pytest.raises(ChannelTimeout):
        b.recv(0.05)
    b.abort()
    with pytest.raises(ProtocolError):
        b.recv(0.05)
    a.send(b"1")
    assert b.pending() == 1
    b.drain()
    assert b.pending() == 0


# -- offline phase -----------------------------------------------------------------


def test_setup_recombines_to_quantized_network():
    netq, (one, two) = fixture_setup(fixture_paper_p8)
    w = recombine_bundles(one.shares, two.shares)
    assert np.array_equal(w["K"], netq.Kq) and np.array_equal(w["c"], netq.cq)
    assert one.session == two.session and one.session.mode == SAFE_SIGN


def test_setup_seeds_change_bytes():
    _, (a, _) = fixture_setup(fixture_saturated_feedback, seed=1)
    _, (b, _) = fixture_setup(fixture_saturated_feedback, seed=2)
    assert a.shares.to_bytes() != b.shares.to_bytes()


def test_setup_share_uniformity_l8():
    rng = np.random.default_rng(0)
    p = 500
    net = RealNetwork(rng.integers(-3, 4, (p, 2)), rng.integers(-3, 4, (p, 2)), rng.integers(-3, 4, p), rng.integers(-3, 4, p))
    cfg = QuantizationConfig.for_network(net, StateDomain(np.array([1.0, 1.0])), 1, 1, 8)
    one, two = offline_setup(quantize_network(net, cfg), cfg, seed=3, ot_group=TEST_GROUP)
    for bundle in (one, two):
        vals = np.concatenate([getattr(bundle.shares, k).values.ravel() for k in "KLbc"])
        assert chisquare(np.bincount(vals.astype(np.int64), minlength=256)).pvalue > 0.01


def test_setup_refuses_uncertified():
    net = fixture_paper_p8().network
    cfg = QuantizationConfig.for_network(net, DOUBLE_INTEGRATOR_BOX, 40, 100, 16)
    with pytest.raises(SetupError):
        offline_setup(quantize_network(net, cfg), cfg)
    cfg = QuantizationConfig.for_network(net, DOUBLE_INTEGRATOR_BOX, 20, 100, 16)
    with pytest.raises(SetupError, match="paper_exact"):
        offline_setup(quantize_network(net, cfg), cfg, mode=PAPER_EXACT)
    without_domain = QuantizationConfig(20, 100, 16, 2, 1000.0)
    with pytest.raises(SetupError):
        offline_setup(quantize_network(net, cfg), without_domain)


def test_setup_mode_resolution():
    _, (b, _) = fixture_setup(fixture_saturated_feedback)
    assert b.session.mode == PAPER_EXACT
    _, (b, _) = fixture_setup(fixture_saturated_feedback, mode=SAFE_SIGN)
    assert b.session.mode == SAFE_SIGN


def test_bundle_files_round_trip(tmp_path):
    _, bundles = fixture_setup(fixture_saturated_feedback, seed=4)
    save_bundles(bundles, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["party1.shares", "party2.shares", "session.json"]
    back = load_bundles(tmp_path)
    assert back[0].session == bundles[0].session
    assert back[1].shares.to_bytes() == bundles[1].shares.to_bytes()
    (tmp_path / "party1.shares").write_bytes((tmp_path / "party2.shares").read_bytes())
    with pytest.raises(SetupError):
        load_bundles(tmp_path)


def test_session_config_validation_and_json():
    cfg = SessionConfig(l=16, p=2, n=2, s1=20, s2=100, half_widths=(25.0, 5.0))
    assert cfg.q == 65536 and cfg.s3 == 2000
    assert SessionConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ContractError):
        cfg.replace(mode="fast")
    with pytest.raises(ContractError):
        cfg.replace(ot_group="rsa")
    with pytest.raises(ContractError):
        cfg.replace(half_widths=(1.0,))


# -- sensor and actuator -----------------------------------------------------------


def shared_state(x, cfg, seed):
    one, two = sensor_step(x, cfg, np.random.default_rng(seed))
    a = ShareArray(1, ring.array_from_bytes(one, cfg.l, (cfg.n,)), cfg.l)
    b = ShareArray(2, ring.array_from_bytes(two, cfg.l, (cfg.n,)), cfg.l)
    return a, b


def test_sensor_step():
    _, (b, _) = fixture_setup(fixture_saturated_feedback)
    cfg = b.session
    assert reconstruct(*shared_state([0, 0], cfg, 1)).tolist() == [0, 0]
    one, two = shared_state([1.26, -0.07], cfg, 2)
    assert reconstruct(one, two).tolist() == [25, -1]
    other, _ = shared_state([1.26, -0.07], cfg, 3)
    assert not np.array_equal(one.values, other.values)
    with pytest.raises(DomainError):
        sensor_step([30, 0], cfg, np.random.default_rng(0))


def test_actuator_examples():
    tiny = SessionConfig(l=3, p=1, n=1, s1=1, s2=1, half_widths=(1.0,))
    assert actuator_reconstruct(3, 4, tiny) == -1
    assert actuator_reconstruct(5, 5, tiny) == 0
    cfg = SessionConfig(l=16, p=1, n=1, s1=20, s2=100, half_widths=(1.0,))
    for k in (0, 1, 12345, 65535):
        assert actuator_reconstruct((9200 + k) % 65536, k, cfg) == pytest.approx(4.6)


# -- online phase ------------------------------------------------------------------


def test_p8_fixture_origin_matches_reference():
    netq, bundles = fixture_setup(fixture_paper_p8)
    with Session(bundles) as s:
        u, _ = s.run_timestep([0, 0])
    assert u == plaintext_reference(netq, [0, 0], bundles[0].session) == 4.2


def test_saturated_fixture_saturates():
    netq, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        for x, want in (([20, 0], -1.0), ([-20, 0], 1.0), ([0, 4], -1.0)):
            assert abs(SATURATED_GAIN @ x) > 1
            u, _ = s.run_timestep(x)
            assert u == want


def test_u_independent_of_seed_transcripts_are_not():
    X = sample_states(DOUBLE_INTEGRATOR_BOX, 4, seed=5)
    results = {}
    for seed in (10, 11, 10):
        netq, bundles = fixture_setup(fixture_paper_p8, seed=seed)
        with Session(bundles) as s:
            out = [s.run_timestep(x) for x in X]
        results.setdefault(seed, []).append(([u for u, _ in out], "".join(t.dump() for _, t in out)))
    (u10, dump10), (u10b, dump10b) = results[10]
    (u11, dump11), = results[11]
    assert u10 == u11 == u10b == [plaintext_reference(netq, x, bundles[0].session) for x in X]
    assert dump10 == dump10b
    assert dump10 != dump11


def test_message_budget_and_symmetry():
    _, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        for x in sample_states(DOUBLE_INTEGRATOR_BOX, 3, seed=6):
            _, t = s.run_timestep(x)
            assert t.tag_counts() == MESSAGES_PER_STEP
            senders = [e.party for e in t.sent(Tag.GARBLED_CIRCUIT)]
            assert sorted(senders) == [ALPHA, BETA]
            assert len(t.entries[ALPHA]) == len(t.entries[BETA])
            sizes = {e.party: len(e.frame) for e in t.sent(Tag.GARBLED_CIRCUIT)}
            assert sizes[ALPHA] == sizes[BETA]


def test_non_reuse_across_steps():
    _, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        for x in sample_states(DOUBLE_INTEGRATOR_BOX, 6, seed=7):
            s.run_timestep(x)
        hashes = [h for t in s.transcripts for h in t.circuit_hashes()]
        ids = [i for t in s.transcripts for i in t.triple_ids()]
    assert len(hashes) == len(set(hashes)) == 12
    assert len(ids) == len(set(ids)) == 12


def test_zero_masks_expose_unmasked_max():
    netq, bundles = fixture_setup(fixture_saturated_feedback, zero_masks=True)
    cfg = bundles[0].session
    x = np.array([3.0, -1.0])
    with Session(bundles) as s:
        _, t = s.run_timestep(x)
    dv = next(ring.from_bytes(e.message.payload, cfg.l).value for e in t.sent(Tag.MASKED_RESULT) if e.party == BETA)
    v, _ = netq.preactivations(np.round(cfg.s1 * x).astype(np.int64))
    assert dv == max(int(z) for z in v) % cfg.q


def tiny_network_setup(mode):
    """p = 2, n = 1, l = 3 network whose preactivations stay inside Z_8."""
    net = RealNetwork([[1.0], [-1.0]], [[0.0], [1.0]], [0.0, 1.0], [0.0, -1.0])
    cfg = QuantizationConfig.for_network(net, StateDomain(np.array([1.0])), 1, 1, 3)
    netq = quantize_network(net, cfg)
    return netq, offline_setup(netq, cfg, seed=8, mode=mode, ot_group=TEST_GROUP)


@pytest.mark.parametrize("mode", [PAPER_EXACT, SAFE_SIGN])
def test_micro_session_l3(mode):
    netq, bundles = tiny_network_setup(mode)
    assert bundles[0].session.mode == mode
    with Session(bundles) as s:
        for x in np.linspace(-1, 1, 9):
            u, t = s.run_timestep([x])
            xi = np.array([int(np.sign(x) * np.floor(abs(x) + 0.5))])
            v, w = netq.preactivations(xi)
            masked = {e.party: ring.from_bytes(e.message.payload, 3).value for e in t.sent(Tag.MASKED_RESULT)}
            assert (masked[BETA] - masked[ALPHA]) % 8 == (max(v) - max(w)) % 8
            assert u == plaintext_reference(netq, [x], s.config)


@pytest.mark.parametrize("transport", ["socket", "tcp"])
def test_socket_transports_agree(transport):
    netq, bundles = fixture_setup(fixture_paper_p8, seed=9)
    X = sample_states(DOUBLE_INTEGRATOR_BOX, 3, seed=9)
    with Session(bundles) as mem, Session(bundles, transport=transport) as sock:
        for x in X:
            a, ta = mem.run_timestep(x)
            b, tb = sock.run_timestep(x)
            assert a == b
            assert ta.dump() == tb.dump()


def test_domain_checked_before_step():
    _, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        with pytest.raises(DomainError):
            s.run_timestep([26, 0])
        assert s.next_step == 0


def test_stale_step_rejected_with_position():
    _, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        s.run_timestep([1, 1])
        stale = ProtocolMessage(Tag.TRIPLE_SHARE, 1, 0, b"").encode()
        s.dealer.channels[ALPHA].send(stale)
        with pytest.raises(ProtocolError, match="stale.*transcript position 0"):
            s.run_timestep([1, 1])


def test_wrong_tag_and_foreign_session_rejected():
    for frame, pattern in ((ProtocolMessage(Tag.OT_REQUEST, 1, 0, b"").encode(), "expected TRIPLE_SHARE"),
                           (ProtocolMessage(Tag.TRIPLE_SHARE, 99, 0, b"").encode(), "foreign session")):
        _, bundles = fixture_setup(fixture_saturated_feedback)
        with Session(bundles) as s:
            s.dealer.channels[BETA].send(frame)
            with pytest.raises(ProtocolError, match=pattern):
                s.run_timestep([1, 1])


def test_replayed_triples_rejected():
    _, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        s.dealer.prepare([0])
        replay = s.dealer._prepared[0]
        s.run_timestep([1, 1])
        s.dealer._prepared[1] = replay
        with pytest.raises(ProtocolError, match="already consumed"):
            s.run_timestep([1, 1])


def test_step_numbers_are_monotone():
    _, bundles = fixture_setup(fixture_saturated_feedback)
    with Session(bundles) as s:
        s.alpha.begin(5)
        with pytest.raises(ProtocolError):
            s.alpha.begin(5)


def test_timeout_aborts_and_controller_holds_input():
    _, bundles = fixture_setup(fixture_saturated_feedback, timeout=0.2)
    with Session(bundles) as s:
        ctrl = ProtocolController(s, hold_on_failure=True)
        first = ctrl([2.0, 0.0])
        s.sensor.run_step = lambda step, x: s.sensor.begin(step)
        t0 = time.perf_counter()
        held = ctrl([0.0, 0.0])
        assert time.perf_counter() - t0 < 3
    assert held == first == -0.5
    assert len(ctrl.failures) == 1 and "time step 1 aborted" in ctrl.failures[0]
    assert s.transcripts[-1].error is not None


def test_controller_propagates_without_hold():
    _, bundles = fixture_setup(fixture_saturated_feedback, timeout=0.2)
    with Session(bundles) as s:
        s.sensor.run_step = lambda step, x: s.sensor.begin(step)
        with pytest.raises(ProtocolError):
            ProtocolController(s)([0.0, 0.0])


def test_bundles_must_match():
    _, (a, _) = fixture_setup(fixture_saturated_feedback, seed=1)
    _, (_, b) = fixture_setup(fixture_saturated_feedback, seed=2)
    with pytest.raises(SetupError):
        Session((a, b))
