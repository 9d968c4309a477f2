"""Offline provisioning and the online time-step protocol.

Roles: the sensor shares the quantized state, a trusted dealer hands out
Beaver triples, two non-colluding clouds (``alpha`` = party 1, ``beta`` =
party 2) evaluate the controller, and the actuator recombines. Per time step
each cloud

1. computes its shares of ``v = Kq xi + bq`` and ``w = Lq xi + cq`` with one
   fresh matrix triple per branch (exchanging ``BEAVER_OPEN``),
2. garbles its own neuron circuit (alpha: the v-circuit with ``v1`` and mask
   ``r1``; beta: the w-circuit with ``w2`` and ``r2``),
3. serves OT for the other cloud's share bits and obtains its own labels,
4. evaluates the peer's circuit and sends its output plus its own mask to
   the actuator: beta sends ``dv = max v + r1 + r2``, alpha sends
   ``dw = max w + r2 + r1``, and ``u = mu(dv - dw mod q) / s3``.

Every party follows a static send/receive schedule, so the step is
deadlock-free on any ordered reliable transport.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ring
from .circuit import PAPER_EXACT, SAFE_SIGN, NeuronCircuitSpec, build_neuron_circuit
from .errors import ContractError, DomainError, ProtocolError, SetupError
from .garble import (
    GarbledCircuit,
    OutputDecoding,
    decode_outputs,
    evaluate_garbled,
    garble,
    label_from_bytes,
    label_to_bytes,
)
from .messages import ProtocolMessage, Tag
from .ot import DEFAULT_PARAMS, TEST_PARAMS, OTRequest, OTResponse, ot_receive_phase1, ot_receive_phase2, ot_send
from .quantize import (
    QuantizationConfig,
    QuantizedNetwork,
    StateDomain,
    certify_no_overflow,
    quantize_state,
)
from .shares import (
    BeaverTripleMatrix,
    OpenedValue,
    ShareArray,
    ShareBundle,
    beaver_open,
    combine_opened,
    deal_triples,
    preactivation_shares,
    share,
    state_matrix,
)
from .transport import DEFAULT_TIMEOUT, TRANSPORTS, ChannelTimeout

SENSOR, DEALER, ALPHA, BETA, ACTUATOR = "sensor", "dealer", "alpha", "beta", "actuator"
ROLES = (SENSOR, DEALER, ALPHA, BETA, ACTUATOR)
LINKS = (
    (SENSOR, ALPHA), (SENSOR, BETA), (DEALER, ALPHA), (DEALER, BETA),
    (ALPHA, BETA), (ALPHA, ACTUATOR), (BETA, ACTUATOR),
)
OT_GROUPS = {DEFAULT_PARAMS.name: DEFAULT_PARAMS, TEST_PARAMS.name: TEST_PARAMS}
AUTO = "auto"


@dataclass(frozen=True)
class SessionConfig:
    l: int
    p: int
    n: int
    s1: float
    s2: float
    half_widths: tuple[float, ...]
    mode: str = PAPER_EXACT
    session_id: int = 1
    seed: int = 0
    ot_group: str = DEFAULT_PARAMS.name
    transport: str = "memory"
    timeout: float = DEFAULT_TIMEOUT
    zero_masks: bool = False

    def __post_init__(self):
        if self.mode not in (PAPER_EXACT, SAFE_SIGN):
            raise ContractError(f"unknown circuit mode {self.mode!r}")
        if self.ot_group not in OT_GROUPS:
            raise ContractError(f"unknown OT group {self.ot_group!r}")
        if self.transport not in TRANSPORTS:
            raise ContractError(f"unknown transport {self.transport!r}")
        if len(self.half_widths) != self.n:
            raise ContractError("domain dimension differs from n")

    @property
    def q(self) -> int:
        return 1 << self.l

    @property
    def s3(self) -> float:
        return self.s1 * self.s2

    @property
    def domain(self) -> StateDomain:
        return StateDomain(np.array(self.half_widths))

    @property
    def ot_params(self):
        return OT_GROUPS[self.ot_group]

    @property
    def circuit_spec(self) -> NeuronCircuitSpec:
        return NeuronCircuitSpec(self.p, self.l, self.mode)

    def quantization(self) -> QuantizationConfig:
        # eta is irrelevant online; only s1, l and the domain are used.
        return QuantizationConfig(self.s1, self.s2, self.l, self.n, 1.0, self.domain)

    def replace(self, **changes) -> "SessionConfig":
        return SessionConfig(**{**asdict(self), **changes})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SessionConfig":
        doc = json.loads(text)
        doc["half_widths"] = tuple(doc["half_widths"])
        return cls(**doc)


@dataclass(frozen=True)
class ProvisioningBundle:
    shares: ShareBundle
    session: SessionConfig

    @property
    def party(self) -> int:
        return self.shares.party


def resolve_mode(requested: str, cert, p: int) -> str:
    power_of_two = p & (p - 1) == 0
    if requested == AUTO:
        return PAPER_EXACT if cert.differences_ok and power_of_two else SAFE_SIGN
    if requested == PAPER_EXACT:
        if not power_of_two:
            raise SetupError(f"paper_exact mode needs p to be a power of two, got {p}")
        if not cert.differences_ok:
            raise SetupError("paper_exact mode needs every pairwise preactivation difference in Z_q; "
                             f"box bound {cert.difference_bound} exceeds {cert.limit}")
        return PAPER_EXACT
    if requested == SAFE_SIGN:
        return SAFE_SIGN
    raise ContractError(f"unknown circuit mode {requested!r}")


def offline_setup(netq: QuantizedNetwork, cfg: QuantizationConfig, seed: int = 0, mode: str = AUTO,
                  session_id: int = 1, **session_options) -> tuple[ProvisioningBundle, ProvisioningBundle]:
    """Certify the quantized network and split it into one bundle per cloud."""
    if cfg.domain is None:
        raise SetupError("quantization config carries no state domain to certify against")
    cert = certify_no_overflow(netq, cfg.domain, cfg)
    if not cert.ok:
        raise SetupError("overflow certificate failed:\n" + cert.summary())
    session = SessionConfig(
        l=cfg.l, p=netq.p, n=netq.n, s1=cfg.s1, s2=cfg.s2,
        half_widths=tuple(float(r) for r in cfg.domain.half_widths),
        mode=resolve_mode(mode, cert, netq.p), session_id=session_id, seed=seed, **session_options,
    )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xD0,)))
    parts = [share(arr, rng, cfg.l) for arr in (netq.Kq, netq.Lq, netq.bq, netq.cq)]
    bundles = tuple(
        ProvisioningBundle(ShareBundle(i + 1, cfg.l, *(pair[i] for pair in parts)), session) for i in range(2)
    )
    return bundles


def save_bundles(bundles, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for b in bundles:
        (d / f"party{b.party}.shares").write_bytes(b.shares.to_bytes())
    (d / "session.json").write_text(bundles[0].session.to_json() + "\n")
    return d


def load_bundles(directory) -> tuple[ProvisioningBundle, ProvisioningBundle]:
    d = Path(directory)
    session = SessionConfig.from_json((d / "session.json").read_text())
    out = []
    for party in (1, 2):
        sb = ShareBundle.from_bytes((d / f"party{party}.shares").read_bytes())
        if sb.party != party or sb.l != session.l or sb.p != session.p or sb.n != session.n:
            raise SetupError(f"share file for party {party} does not match the session config")
        out.append(ProvisioningBundle(sb, session))
    return tuple(out)


def actuator_reconstruct(dv: int, dw: int, cfg) -> float:
    """``mu((dv - dw) mod q) / s3``; both masks cancel in the difference."""
    l = cfg.l
    diff = ring.RingElement.reduce(int(dv) - int(dw), l)
    return ring.mu(diff).value / cfg.s3


def plaintext_reference(netq: QuantizedNetwork, x, cfg) -> float:
    """Integer oracle for the whole pipeline, wrapping exactly as the protocol does."""
    xi = quantize_state(x, cfg.quantization() if isinstance(cfg, SessionConfig) else cfg)
    v, w = netq.preactivations(xi)
    q = 1 << cfg.l
    mu = lambda z: ring.mu(ring.RingElement.reduce(int(z), cfg.l)).value  # noqa: E731
    mv = max(mu(z) for z in v)
    mw = max(mu(z) for z in w)
    return ring.mu(ring.RingElement((mv - mw) % q, cfg.l)).value / cfg.s3


# -- transcript -------------------------------------------------------------------


@dataclass
class TranscriptEntry:
    party: str
    direction: str
    peer: str
    frame: bytes
    elapsed: float

    @property
    def message(self) -> ProtocolMessage:
        return ProtocolMessage.decode(self.frame)

    def line(self) -> str:
        m = self.message
        return f"{self.party} {self.direction} {self.peer} {m.tag.name} {m.step} {self.frame.hex()}"


@dataclass
class TimeStepTranscript:
    step: int
    entries: dict = field(default_factory=dict)
    u: float | None = None
    wall_time: float = 0.0
    error: str | None = None

    def all_entries(self):
        for role in ROLES:
            yield from self.entries.get(role, [])

    def dump(self) -> str:
        """One frame per line; no timings, so equal seeds give equal dumps."""
        return "".join(e.line() + "\n" for e in self.all_entries())

    def sent(self, tag: Tag | None = None) -> list[TranscriptEntry]:
        return [e for e in self.all_entries() if e.direction == "send" and (tag is None or e.message.tag == tag)]

    def tag_counts(self) -> dict:
        counts = {}
        for e in self.sent():
            counts[e.message.tag.name] = counts.get(e.message.tag.name, 0) + 1
        return counts

    def circuit_hashes(self) -> list[bytes]:
        return [hashlib.sha256(e.message.payload).digest() for e in self.sent(Tag.GARBLED_CIRCUIT)]

    def triple_ids(self) -> list[int]:
        """Distinct triple ids dealt this step (both clouds get shares of the same triples)."""
        ids = set()
        for e in self.sent(Tag.TRIPLE_SHARE):
            ids.update(struct.unpack_from("<II", e.message.payload))
        return sorted(ids)


# -- parties -----------------------------------------------------------------------


def step_rng(seed: int, role: str, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ROLES.index(role) + 1, step)))


class Party:
    role = ""

    def __init__(self, session: SessionConfig, channels: dict):
        self.session = session
        self.channels = channels
        self.step = -1
        self.log: list[TranscriptEntry] = []
        self._t0 = 0.0

    def begin(self, step: int):
        if step <= self.step:
            raise ProtocolError(f"{self.role}: time step {step} is not after {self.step}")
        self.step = step
        self.log = []
        self._t0 = time.perf_counter()

    def send(self, peer: str, tag: Tag, payload: bytes):
        frame = ProtocolMessage(tag, self.session.session_id, self.step, payload).encode()
        self.log.append(TranscriptEntry(self.role, "send", peer, frame, time.perf_counter() - self._t0))
        self.channels[peer].send(frame)

    def recv(self, peer: str, tag: Tag) -> bytes:
        position = len(self.log)
        try:
            frame = self.channels[peer].recv(self.session.timeout)
        except ChannelTimeout as exc:
            raise ProtocolError(f"{self.role}: waiting for {tag.name} from {peer}: {exc}", position) from None
        msg = ProtocolMessage.decode(frame)
        self.log.append(TranscriptEntry(self.role, "recv", peer, frame, time.perf_counter() - self._t0))
        if msg.session_id != self.session.session_id:
            raise ProtocolError(f"{self.role}: message from foreign session {msg.session_id}", position)
        if msg.step != self.step:
            raise ProtocolError(f"{self.role}: stale message for step {msg.step}, expected {self.step}", position)
        if msg.tag != tag:
            raise ProtocolError(f"{self.role}: expected {tag.name} from {peer}, got {msg.tag.name}", position)
        return msg.payload


def sensor_step(x, cfg: SessionConfig, rng: np.random.Generator) -> tuple[bytes, bytes]:
    """STATE_SHARE payloads for both clouds: shares of xi = round(s1 x)."""
    xi = quantize_state(x, cfg.quantization())
    one, two = share(xi, rng, cfg.l)
    return ring.array_to_bytes(one.values, cfg.l), ring.array_to_bytes(two.values, cfg.l)


class Sensor(Party):
    role = SENSOR

    def run_step(self, step: int, x):
        self.begin(step)
        one, two = sensor_step(x, self.session, step_rng(self.session.seed, SENSOR, step))
        self.send(ALPHA, Tag.STATE_SHARE, one)
        self.send(BETA, Tag.STATE_SHARE, two)


def _triple_payload(v: BeaverTripleMatrix, w: BeaverTripleMatrix, l: int) -> bytes:
    head = struct.pack("<II", v.triple_id, w.triple_id)
    return head + b"".join(ring.array_to_bytes(m, l) for t in (v, w) for m in (t.A, t.B, t.C))


class Dealer(Party):
    """Trusted dealer: two fresh matrix triples per cloud per step (v and w branches)."""

    role = DEALER

    def __init__(self, session, channels):
        super().__init__(session, channels)
        self._prepared: dict = {}

    def prepare(self, steps):
        cfg = self.session
        for step in steps:
            rng = step_rng(cfg.seed, DEALER, step)
            one, two = deal_triples((cfg.p, cfg.n), 2, rng, cfg.l, first_id=2 * step)
            self._prepared[step] = (_triple_payload(*one, cfg.l), _triple_payload(*two, cfg.l))

    def run_step(self, step: int):
        self.begin(step)
        if step not in self._prepared:
            self.prepare([step])
        p1, p2 = self._prepared.pop(step)
        self.send(ALPHA, Tag.TRIPLE_SHARE, p1)
        self.send(BETA, Tag.TRIPLE_SHARE, p2)


class Cloud(Party):
    def __init__(self, bundle: ProvisioningBundle, channels: dict):
        super().__init__(bundle.session, channels)
        self.bundle = bundle
        self.party = bundle.party
        self.role = ALPHA if self.party == 1 else BETA
        self.peer = BETA if self.party == 1 else ALPHA
        self.circuit = build_neuron_circuit(bundle.session.circuit_spec)
        self.used_triples: set[int] = set()
        self.garbled_hashes: set[bytes] = set()

    def _parse_triples(self, payload: bytes):
        cfg = self.session
        ids = struct.unpack_from("<II", payload)
        size = cfg.p * cfg.n * ring.element_size(cfg.l)
        body = payload[8:]
        if len(body) != 6 * size:
            raise ProtocolError(f"{self.role}: TRIPLE_SHARE payload has wrong size")
        mats = [ring.array_from_bytes(body[k * size : (k + 1) * size], cfg.l, (cfg.p, cfg.n)) for k in range(6)]
        triples = []
        for k, tid in enumerate(ids):
            if tid in self.used_triples:
                raise ProtocolError(f"{self.role}: Beaver triple {tid} was already consumed")
            self.used_triples.add(tid)
            triples.append(BeaverTripleMatrix(self.party, *mats[3 * k : 3 * k + 3], cfg.l, tid))
        return triples

    def _encode_open(self, a: OpenedValue, b: OpenedValue) -> bytes:
        l = self.session.l
        return b"".join(ring.array_to_bytes(m, l) for m in (a.D, a.E, b.D, b.E))

    def _decode_open(self, payload: bytes):
        cfg = self.session
        size = cfg.p * cfg.n * ring.element_size(cfg.l)
        if len(payload) != 4 * size:
            raise ProtocolError(f"{self.role}: BEAVER_OPEN payload has wrong size")
        m = [ring.array_from_bytes(payload[k * size : (k + 1) * size], cfg.l, (cfg.p, cfg.n)) for k in range(4)]
        return OpenedValue(m[0], m[1]), OpenedValue(m[2], m[3])

    def run_step(self, step: int):
        self.begin(step)
        cfg, l, p = self.session, self.session.l, self.session.p
        rng = step_rng(cfg.seed, self.role, step)
        sb = self.bundle.shares

        triple_v, triple_w = self._parse_triples(self.recv(DEALER, Tag.TRIPLE_SHARE))
        xi_values = ring.array_from_bytes(self.recv(SENSOR, Tag.STATE_SHARE), l, (cfg.n,))
        Xi = state_matrix(ShareArray(self.party, xi_values, l), p)

        mine_v = beaver_open(sb.K, Xi, triple_v)
        mine_w = beaver_open(sb.L, Xi, triple_w)
        self.send(self.peer, Tag.BEAVER_OPEN, self._encode_open(mine_v, mine_w))
        theirs_v, theirs_w = self._decode_open(self.recv(self.peer, Tag.BEAVER_OPEN))
        v = preactivation_shares(combine_opened(mine_v, theirs_v, l), triple_v, sb.b)
        w = preactivation_shares(combine_opened(mine_w, theirs_w, l), triple_w, sb.c)

        # alpha garbles the v-circuit and evaluates beta's w-circuit; beta mirrors.
        garbler_word, evaluator_word = (v, w) if self.party == 1 else (w, v)
        r = 0 if cfg.zero_masks else int(ring.random_residues(rng, (), l))
        gc, encoding, decoding = garble(self.circuit, rng, l=l, p=p)
        gc_bytes = gc.to_bytes()
        digest = hashlib.sha256(gc_bytes).digest()
        if digest in self.garbled_hashes:
            raise ProtocolError(f"{self.role}: garbled circuit reused")
        self.garbled_hashes.add(digest)
        labels = []
        for label, wire in self.circuit.garbler_inputs:
            word = r if label[0] == "r" else int(garbler_word.values[label[1]])
            labels.append(encoding.active(wire, (word >> label[-1]) & 1))
        labels.append(encoding.active(self.circuit.const_zero, 0))
        self.send(self.peer, Tag.GARBLED_CIRCUIT, gc_bytes)
        self.send(self.peer, Tag.GARBLER_INPUT_LABELS, b"".join(label_to_bytes(x) for x in labels))
        self.send(self.peer, Tag.OUTPUT_DECODE, decoding.to_bytes())

        choices = [(int(evaluator_word.values[label[1]]) >> label[-1]) & 1 for label, _ in self.circuit.evaluator_inputs]
        request, ot_state = ot_receive_phase1(choices, rng, cfg.ot_params)
        self.send(self.peer, Tag.OT_REQUEST, request.to_bytes(cfg.ot_params))

        peer_gc = GarbledCircuit.from_bytes(self.recv(self.peer, Tag.GARBLED_CIRCUIT), self.circuit)
        peer_labels = self.recv(self.peer, Tag.GARBLER_INPUT_LABELS)
        peer_decoding = OutputDecoding.from_bytes(self.recv(self.peer, Tag.OUTPUT_DECODE))

        peer_request = OTRequest.from_bytes(self.recv(self.peer, Tag.OT_REQUEST), cfg.ot_params)
        pairs = [tuple(label_to_bytes(x) for x in encoding.pairs[wire]) for _, wire in self.circuit.evaluator_inputs]
        self.send(self.peer, Tag.OT_RESPONSE, ot_send(peer_request, pairs, rng, cfg.ot_params).to_bytes(cfg.ot_params))
        response = OTResponse.from_bytes(self.recv(self.peer, Tag.OT_RESPONSE), cfg.ot_params)
        my_labels = ot_receive_phase2(response, ot_state, cfg.ot_params)

        g_wires = [wire for _, wire in self.circuit.garbler_inputs] + [self.circuit.const_zero]
        if len(peer_labels) != 16 * len(g_wires):
            raise ProtocolError(f"{self.role}: GARBLER_INPUT_LABELS payload has wrong size")
        active = {wire: label_from_bytes(peer_labels[16 * k : 16 * k + 16]) for k, wire in enumerate(g_wires)}
        for (_, wire), lab in zip(self.circuit.evaluator_inputs, my_labels):
            active[wire] = label_from_bytes(lab)
        bits = decode_outputs(evaluate_garbled(peer_gc, active), peer_decoding)
        value = ring.int_of_bits(bits)
        masked = (value + r) % cfg.q
        self.send(ACTUATOR, Tag.MASKED_RESULT, ring.to_bytes(ring.RingElement(masked, l)))


class Actuator(Party):
    role = ACTUATOR

    def run_step(self, step: int) -> float:
        self.begin(step)
        l = self.session.l
        dv = ring.from_bytes(self.recv(BETA, Tag.MASKED_RESULT), l).value
        dw = ring.from_bytes(self.recv(ALPHA, Tag.MASKED_RESULT), l).value
        return actuator_reconstruct(dv, dw, self.session)


class Session:
    """All five parties wired over one transport; runs time steps in threads."""

    def __init__(self, bundles, transport: str | None = None):
        one, two = sorted(bundles, key=lambda b: b.party)
        if one.session != two.session or (one.party, two.party) != (1, 2):
            raise SetupError("bundles do not belong to the same session")
        self.config = one.session if transport is None else one.session.replace(transport=transport)
        one = ProvisioningBundle(one.shares, self.config)
        two = ProvisioningBundle(two.shares, self.config)
        make = TRANSPORTS[self.config.transport]
        ends = {role: {} for role in ROLES}
        self._channels = []
        for a, b in LINKS:
            ea, eb = make()
            ends[a][b], ends[b][a] = ea, eb
            self._channels += [ea, eb]
        self.sensor = Sensor(self.config, ends[SENSOR])
        self.dealer = Dealer(self.config, ends[DEALER])
        self.alpha = Cloud(one, ends[ALPHA])
        self.beta = Cloud(two, ends[BETA])
        self.actuator = Actuator(self.config, ends[ACTUATOR])
        self.next_step = 0
        self.transcripts: list[TimeStepTranscript] = []
        self._seen_circuits: set[bytes] = set()
        self._seen_triples: set[int] = set()

    @property
    def parties(self):
        return (self.sensor, self.dealer, self.alpha, self.beta, self.actuator)

    def prepare(self, count: int):
        """Pre-generate dealer material for the next ``count`` steps (excluded from timing)."""
        self.dealer.prepare(range(self.next_step, self.next_step + count))

    def run_timestep(self, x) -> tuple[float, TimeStepTranscript]:
        x = np.asarray(x, dtype=np.float64)
        if not self.config.domain.contains(x):
            raise DomainError(f"state {x.tolist()} lies outside the declared domain")
        step = self.next_step
        self.next_step += 1
        result, errors = {}, []

        def work(party, *args):
            try:
                result[party.role] = party.run_step(step, *args)
            except BaseException as exc:  # noqa: BLE001
                errors.append((party.role, exc))
                for ch in self._channels:
                    ch.abort()

        t0 = time.perf_counter()
        threads = [threading.Thread(target=work, args=(self.sensor, x))]
        threads += [threading.Thread(target=work, args=(p,)) for p in (self.dealer, self.alpha, self.beta, self.actuator)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        wall = time.perf_counter() - t0
        transcript = TimeStepTranscript(step, {p.role: list(p.log) for p in self.parties}, wall_time=wall)
        self.transcripts.append(transcript)
        if errors:
            for ch in self._channels:
                ch.drain()
            role, exc = next(((r, e) for r, e in errors if "aborted" not in str(e)), errors[0])
            transcript.error = f"{role}: {exc}"
            if isinstance(exc, ProtocolError):
                raise ProtocolError(f"time step {step} aborted by {role}: {exc}") from exc
            raise exc
        for h in transcript.circuit_hashes():
            if h in self._seen_circuits:
                raise ProtocolError(f"garbled circuit reused in step {step}")
            self._seen_circuits.add(h)
        for tid in transcript.triple_ids():
            if tid in self._seen_triples:
                raise ProtocolError(f"triple {tid} dealt twice")
            self._seen_triples.add(tid)
        transcript.u = result[ACTUATOR]
        return transcript.u, transcript

    def close(self):
        for ch in self._channels:
            ch.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_timestep(x, session: Session):
    return session.run_timestep(x)


class ProtocolController:
    """Closed-loop callback backed by a session.

    A failed step (timeout, abort) holds the previous input when
    ``hold_on_failure`` is set; this is a runtime policy, the failure is
    still counted in ``failures``.
    """

    def __init__(self, session: Session, hold_on_failure: bool = False, initial_input: float = 0.0):
        self.session = session
        self.hold_on_failure = hold_on_failure
        self.last = initial_input
        self.failures: list[str] = []
        self.step_times: list[float] = []

    def __call__(self, x) -> float:
        try:
            u, transcript = self.session.run_timestep(x)
        except ProtocolError as exc:
            if not self.hold_on_failure:
                raise
            self.failures.append(str(exc))
            return self.last
        self.step_times.append(transcript.wall_time)
        self.last = u
        return u


# Each of the nine tags is sent exactly twice per step.
MESSAGES_PER_STEP = {tag.name: 2 for tag in Tag}
