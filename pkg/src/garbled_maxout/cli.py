"""Command-line entry point.

Exit codes: 0 success, 1 verification or protocol failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import secrets
import statistics
import sys
from pathlib import Path

import numpy as np

from . import garble as garble_mod
from .circuit import MODES, PAPER_EXACT, NeuronCircuitSpec, build_neuron_circuit, export_netlist
from .errors import BuildError, ContractError, DomainError, GarbledMaxoutError, ProtocolError, SetupError
from .plant import DOUBLE_INTEGRATOR_BOX, FIXTURES, closed_loop, double_integrator
from .protocol import (
    AUTO,
    OT_GROUPS,
    ProtocolController,
    Session,
    load_bundles,
    offline_setup,
    plaintext_reference,
    save_bundles,
)
from .quantize import (
    QuantizationConfig,
    QuantizedNetwork,
    RealNetwork,
    StateDomain,
    certify_no_overflow,
    delta_bound,
    error_bound,
    load_document,
    quantize_network,
    s3_max,
)
from .shares import recombine_bundles
from .transport import TRANSPORTS
from .verify import SUITES, fixture_config, run_suite

OK, FAILURE, USAGE = 0, 1, 2
# Scales used for the built-in fixtures unless overridden by flags.
FIXTURE_SCALES = {"s1": 20, "s2": 100, "l": 16}


class UsageError(Exception):
    pass


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _network_source(args) -> tuple[RealNetwork, dict]:
    if args.fixture:
        return FIXTURES[args.fixture]().network, dict(FIXTURE_SCALES)
    path = Path(args.network)
    if not path.is_file():
        raise UsageError(f"network file {path} does not exist")
    try:
        doc = load_document(path)
        return RealNetwork.from_dict(doc), doc
    except (ValueError, KeyError, ContractError) as exc:
        raise UsageError(f"network file {path} is invalid: {exc}") from None


def _setup_parameters(args, net: RealNetwork, doc: dict):
    s1 = args.s1 if args.s1 is not None else doc.get("s1")
    s2 = args.s2 if args.s2 is not None else doc.get("s2")
    l = args.l if args.l is not None else doc.get("l")
    if None in (s1, s2, l):
        raise UsageError("s1, s2 and l must be given as flags or in the network file")
    if args.box is not None:
        dom = StateDomain(args.box)
    elif "box" in doc:
        dom = StateDomain(np.array(doc["box"], dtype=np.float64))
    elif args.fixture:
        dom = DOUBLE_INTEGRATOR_BOX
    else:
        raise UsageError("state box must be given with --box or as 'box' in the network file")
    if dom.n != net.n:
        raise UsageError(f"box has dimension {dom.n}, network expects {net.n}")
    return QuantizationConfig.for_network(net, dom, s1, s2, l)


def cmd_setup(args) -> int:
    net, doc = _network_source(args)
    cfg = _setup_parameters(args, net, doc)
    out = sys.stdout
    limit = s3_max(net, cfg.domain, cfg.l, args.delta_cap)
    delta = delta_bound(cfg)
    print(f"p={net.p} n={net.n} l={cfg.l} s1={cfg.s1:g} s2={cfg.s2:g} s3={cfg.s3:g}", file=out)
    print(f"s3_max={limit:.6g}", file=out)
    print(f"eta={cfg.eta:g}", file=out)
    print(f"delta={delta:.6g} (error bound {error_bound(cfg):.6g})", file=out)
    failed = []
    if cfg.s3 > limit:
        failed.append(f"s3={cfg.s3:g} exceeds s3_max={limit:.6g}")
    if delta > args.delta_cap:
        failed.append(f"delta={delta:.6g} exceeds the cap {args.delta_cap:g}")
    try:
        netq = quantize_network(net, cfg)
    except OverflowError as exc:
        print(f"certificate: FAILED\n  {exc}", file=out)
        return FAILURE
    cert = certify_no_overflow(netq, cfg.domain, cfg)
    print("certificate:\n" + "\n".join("  " + s for s in cert.summary().splitlines()), file=out)
    if failed:
        print("setup FAILED: " + "; ".join(failed), file=out)
        return FAILURE
    seed = args.seed if args.seed is not None else secrets.randbits(63)
    try:
        bundles = offline_setup(netq, cfg, seed=seed, mode=args.mode, session_id=args.session_id,
                                ot_group=args.ot_group, transport=args.transport)
    except SetupError as exc:
        print(f"setup FAILED: {exc}", file=out)
        return FAILURE
    d = save_bundles(bundles, args.out)
    print(f"circuit mode: {bundles[0].session.mode}", file=out)
    print(f"wrote {d / 'party1.shares'}, {d / 'party2.shares'}, {d / 'session.json'}", file=out)
    return OK


def _session_bundles(args):
    """Bundles from --bundles DIR, or provisioned in memory for --fixture."""
    if getattr(args, "bundles", None):
        d = Path(args.bundles)
        if not (d / "session.json").is_file():
            raise UsageError(f"{d} holds no provisioning bundles")
        bundles = load_bundles(d)
    else:
        _, cfg, netq = fixture_config(args.fixture, args.l)
        bundles = offline_setup(netq, cfg, seed=0, mode=args.mode, ot_group=args.ot_group)
    overrides = {}
    if getattr(args, "session_config", None):
        overrides.update(json.loads(Path(args.session_config).read_text()))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "transport", None):
        overrides["transport"] = args.transport
    if overrides:
        session = bundles[0].session.replace(**overrides)
        bundles = tuple(type(b)(b.shares, session) for b in bundles)
    return bundles


def _recombined_network(bundles) -> QuantizedNetwork:
    one, two = (b.shares for b in bundles)
    w = recombine_bundles(one, two)
    return QuantizedNetwork(Kq=w["K"], Lq=w["L"], bq=w["b"], cq=w["c"])


def _dump_failure(session: Session, path: Path) -> Path:
    path.write_text("".join(t.dump() for t in session.transcripts))
    return path


def cmd_run(args) -> int:
    bundles = _session_bundles(args)
    netq = _recombined_network(bundles)
    sys_ = double_integrator()
    with Session(bundles) as session:
        cfg = session.config
        session.prepare(args.steps)
        controller = ProtocolController(session, hold_on_failure=args.hold_on_timeout)
        try:
            trace = closed_loop(sys_, controller, args.x0, args.steps, guard=cfg.domain,
                                name=args.fixture or str(args.bundles), seed=cfg.seed)
        except ProtocolError as exc:
            path = _dump_failure(session, Path(args.transcript))
            print(f"protocol failure: {exc}\ntranscript: {path}", file=sys.stderr)
            return FAILURE
        if args.transcript_always:
            _dump_failure(session, Path(args.transcript))
    mismatches = sum(plaintext_reference(netq, x, cfg) != u for x, u in zip(trace.states, trace.inputs))
    if args.out == "-":
        trace.write_csv(sys.stdout)
    else:
        trace.write_csv(args.out)
    times = controller.step_times
    summary = [
        f"steps={trace.steps} truncated={trace.truncated} mode={cfg.mode} transport={cfg.transport}",
        f"mean step time {1e3 * statistics.fmean(times):.2f} ms" if times else "no completed steps",
        f"final state {trace.states[-1].tolist()}",
        f"plaintext mismatches {mismatches}",
    ]
    if controller.failures:
        summary.append(f"held input after {len(controller.failures)} failed steps")
    print("\n".join(summary), file=sys.stderr if args.out == "-" else sys.stdout)
    return FAILURE if mismatches or controller.failures else OK


def cmd_step(args) -> int:
    bundles = _session_bundles(args)
    with Session(bundles) as session:
        try:
            u, transcript = session.run_timestep(args.x)
        except ProtocolError as exc:
            path = _dump_failure(session, Path(args.transcript or "transcript.txt"))
            print(f"protocol failure: {exc}\ntranscript: {path}", file=sys.stderr)
            return FAILURE
    if args.transcript:
        Path(args.transcript).write_text(transcript.dump())
    print(repr(u))
    return OK


def cmd_bench(args) -> int:
    bundles = _session_bundles(args)
    rng = np.random.default_rng(args.state_seed)
    with Session(bundles) as session:
        dom = session.config.domain
        states = rng.uniform(-dom.half_widths, dom.half_widths, size=(args.steps, dom.n))
        session.prepare(args.steps)
        times = []
        for x in states:
            _, t = session.run_timestep(x)
            times.append(t.wall_time)
        cfg = session.config
    ms = np.array(times) * 1e3
    print(f"p={cfg.p} l={cfg.l} mode={cfg.mode} transport={cfg.transport} ot={cfg.ot_group} steps={len(ms)}")
    print(f"mean {ms.mean():.2f} ms  median {np.median(ms):.2f} ms  max {ms.max():.2f} ms")
    return OK


def cmd_verify(args) -> int:
    if args.mode == PAPER_EXACT:
        _, cfg, netq = fixture_config(args.fixture)
        cert = certify_no_overflow(netq, cfg.domain, cfg)
        if not cert.differences_ok:
            print(f"verify refuses paper_exact for {args.fixture}: pairwise differences are not certified "
                  f"(bound {cert.difference_bound} > {cert.limit})", file=sys.stderr)
            return USAGE
    results = run_suite(args.suite, fault=args.inject_fault, fixture=args.fixture, mode=args.mode,
                        report=lambda r: print(r.line(), flush=True))
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return FAILURE if failed else OK


def _circuit_from_args(args):
    try:
        return build_neuron_circuit(NeuronCircuitSpec(args.p, args.l, args.mode))
    except BuildError as exc:
        raise UsageError(str(exc)) from None


def cmd_circuit_stats(args) -> int:
    c = _circuit_from_args(args)
    tables = garble_mod.HEADER_BYTES + 64 * c.and_count
    decode = 2 + len(c.outputs) * 33
    print(f"p={args.p} l={args.l} mode={args.mode}")
    print(f"AND {c.and_count}")
    print(f"XOR {c.xor_count}")
    print(f"NOT {c.not_count}")
    print(f"wires {c.wire_count}")
    print(f"garbled bytes {tables} (header {garble_mod.HEADER_BYTES} + 64 x {c.and_count} AND)")
    print(f"output decode bytes {decode}")
    return OK


def cmd_export_circuit(args) -> int:
    c = _circuit_from_args(args)
    Path(args.out).write_text(export_netlist(c))
    print(f"wrote {args.out} ({c.and_count} AND gates)")
    return OK


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="garbled-maxout", description="Two-cloud evaluation of max-out controllers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def session_source(p, need_fixture_default=True):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--bundles", help="directory written by setup")
        src.add_argument("--fixture", choices=sorted(FIXTURES), help="provision a built-in fixture in memory")
        p.add_argument("--l", type=_positive_int, default=16, help="bit width when provisioning a fixture")
        p.add_argument("--mode", choices=[AUTO, *MODES], default=AUTO)
        p.add_argument("--ot-group", choices=sorted(OT_GROUPS), default="qr256")
        p.add_argument("--transport", choices=sorted(TRANSPORTS))
        p.add_argument("--seed", type=int, help="session seed for online randomness")
        p.add_argument("--session-config", help="JSON file overriding session fields")

    p = sub.add_parser("setup", help="quantize, certify and write provisioning bundles")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--network", help="network JSON file (K, L, b, c; optional s1, s2, l, box)")
    src.add_argument("--fixture", choices=sorted(FIXTURES))
    p.add_argument("--s1", type=float)
    p.add_argument("--s2", type=float)
    p.add_argument("--l", type=_positive_int)
    p.add_argument("--box", type=_vector, help="state box half-widths, e.g. 25,5")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="provisioning seed (default: fresh)")
    p.add_argument("--mode", choices=[AUTO, *MODES], default=AUTO)
    p.add_argument("--session-id", type=int, default=1)
    p.add_argument("--ot-group", choices=sorted(OT_GROUPS), default="qr256")
    p.add_argument("--transport", choices=sorted(TRANSPORTS), default="memory")
    p.add_argument("--delta-cap", type=float, default=1.0)
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("run", help="closed loop with the protocol in the loop")
    session_source(p)
    p.add_argument("--steps", type=_positive_int, default=40)
    p.add_argument("--x0", type=_vector, default=np.array([5.0, 0.0]))
    p.add_argument("--out", default="-", help="trace CSV path, '-' for stdout")
    p.add_argument("--transcript", default="transcript.txt", help="where to dump frames on failure")
    p.add_argument("--transcript-always", action="store_true", help="dump frames even on success")
    p.add_argument("--hold-on-timeout", action="store_true", help="hold the previous input when a step fails")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("step", help="one protocol time step")
    session_source(p)
    p.add_argument("--x", type=_vector, required=True)
    p.add_argument("--transcript", help="write the frame dump here")
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("bench", help="mean per-step wall time over random states")
    session_source(p)
    p.add_argument("--steps", type=_positive_int, default=50)
    p.add_argument("--state-seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the self-check suite")
    p.add_argument("--suite", choices=SUITES, default="small")
    p.add_argument("--fixture", choices=sorted(FIXTURES), default="saturated")
    p.add_argument("--mode", choices=[AUTO, *MODES], default=AUTO)
    p.add_argument("--inject-fault", choices=["kdf"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    for name, func, help_ in (("circuit-stats", cmd_circuit_stats, "gate counts and garbled size"),
                              ("export-circuit", cmd_export_circuit, "write the neuron netlist")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--p", type=_positive_int, required=True)
        p.add_argument("--l", type=_positive_int, required=True)
        p.add_argument("--mode", choices=MODES, default=PAPER_EXACT)
        if name == "export-circuit":
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"garbled-maxout {args.command}: {exc}", file=sys.stderr)
        return USAGE
    except (DomainError, ContractError) as exc:
        print(f"garbled-maxout {args.command}: {exc}", file=sys.stderr)
        return USAGE
    except GarbledMaxoutError as exc:
        print(f"garbled-maxout {args.command}: {exc}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())
