"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad or missing flag, missing input
file), 2 data error (input that fails to decode, validate or plan).
Diagnostics go to stderr; results go to stdout or ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, codec, evalkit, gateway, prediction, promptgen, replay, synth
from .advisory import AdvisoryError, plan_route
from .codec import CodecError
from .geo import GeoError
from .scenario import EncodedScenario, ScenarioError, encode_scenario, scenario_from_json, scenario_to_json
from .tasks import Oracle, query_text
from .timefmt import parse_ts

logger = logging.getLogger("v2xcorridor")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

DATA_ERRORS = (
    CodecError,
    GeoError,
    ScenarioError,
    AdvisoryError,
    promptgen.PromptError,
    prediction.InsufficientHistory,
    prediction.PhaseNotInCycle,
    gateway.GatewayError,
    evalkit.EvalError,
    replay.ReplayError,
    synth.InvalidSpec,
    KeyError,
    ValueError,
)


class UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str) -> None:
        self.parser = parser
        super().__init__(message)


class IncompleteReport(ValueError):
    """The report lacks the trajectory or per-hop arrival metrics a plot needs."""


class UnknownSource(ValueError):
    """A backend or answer source name that is not one of the supported kinds."""


def _unknown_flags(parsers: Sequence[argparse.ArgumentParser], argv: Sequence[str]) -> list[str]:
    known = {k for p in parsers for k in p._option_string_actions}
    return [a for a in argv if a.startswith("-") and a != "-" and a.split("=", 1)[0] not in known]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(self, message)


# ------------------------------------------------------------------ helpers

def _existing(path: str, flag: str, parser: argparse.ArgumentParser) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(parser, f"{flag}: no such file {path!r}")
    return p


def _at(text: str, parser: argparse.ArgumentParser) -> int:
    try:
        return parse_ts(text)
    except ValueError:
        raise UsageError(parser, f"--at: cannot parse timestamp {text!r}") from None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def read_order(path: Path) -> list[str]:
    """Corridor order file: a JSON list of intersection ids, or ``{"order": [...]}``."""
    doc = json.loads(path.read_text(encoding="utf-8"))
    order = doc.get("order") if isinstance(doc, dict) else doc
    if not isinstance(order, list) or not all(isinstance(x, str) for x in order):
        raise ValueError(f"{path}: expected a JSON list of intersection ids")
    return order


def read_messages(path: Path) -> list[codec.V2xMessage]:
    """Messages from a ``.v2xlog``, a JSONL file, or a file of binary frames."""
    if path.suffix == ".v2xlog":
        return replay.SessionLog.read(path).messages
    data = path.read_bytes()
    if data[:1] in (b"{", b" ", b"\n", b"\r", b"\t") or not data:
        out = []
        for n, line in enumerate(data.decode("utf-8").splitlines(), 1):
            if line.strip():
                try:
                    out.append(codec.parse_line(line))
                except CodecError as exc:
                    raise type(exc)(f"{path}:{n}: {exc}") from None
        return out
    out = []
    buf = data
    while buf:
        payload, buf = codec.frame_split(buf)
        out.append(codec.parse_line(payload))
    return out


def load_scenario(path: Path, order_path: Optional[Path] = None, order: Optional[list[str]] = None) -> EncodedScenario:
    if path.suffix == ".json":
        return scenario_from_json(path.read_text(encoding="utf-8"))
    if order is None:
        if order_path is None:
            raise ValueError(f"{path} holds raw messages; pass --order to give the corridor order")
        order = read_order(order_path)
    return encode_scenario(read_messages(path), order)


def make_backend(spec: str, endpoint: Optional[str] = None, model: Optional[str] = None):
    """``oracle`` (None), ``stub``, ``transcript:<file>`` or ``remote``."""
    if spec == "oracle":
        return None
    if spec == "stub":
        return gateway.StubBackend()
    if spec.startswith("transcript:"):
        return gateway.TranscriptBackend(spec.split(":", 1)[1])
    if spec == "remote":
        return gateway.RemoteBackend.from_env(endpoint, model)
    raise UnknownSource(f"unknown source {spec!r}; use oracle, stub, transcript:<file> or remote")


def _answer(args, oracle: Oracle, kind: str, reference: str, query: str, window: tuple[int, int]) -> str:
    backend = make_backend(args.backend, args.llm_endpoint, args.llm_model)
    if backend is None:
        return reference
    bundle = promptgen.make_bundle(oracle.scenario.window(*window), kind, reference)
    return gateway.complete(gateway.build_request(bundle, query), backend).raw_text


def _oracle(args) -> Oracle:
    scenario = load_scenario(
        _existing(args.scenario, "--scenario", args._parser),
        _existing(args.order, "--order", args._parser) if getattr(args, "order", None) else None,
    )
    cycles = None
    if getattr(args, "phase_plan", None):
        cycles = prediction.load_phase_plan(_existing(args.phase_plan, "--phase-plan", args._parser))
    return Oracle(scenario, cycles)


def plot_errors(report: evalkit.EvalReport, out_path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` with (series, x, y) rows for trajectory error by
    horizon and arrival error by hop, and a two-panel chart at ``out_path``."""
    traj = report.traj_err_ft
    hops = report.arrival_err_s
    if not traj or any(v is None for v in traj.values()):
        raise IncompleteReport("report has no trajectory error for every horizon")
    if not hops or any(v is None for v in hops):
        raise IncompleteReport("report has no arrival error for every hop")
    out = Path(out_path)
    csv_path = out.with_suffix(".csv")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "x", "y"])
        for h, v in sorted(traj.items()):
            w.writerow(["traj_err_ft", h, f"{v:.6f}"])
        for k, v in enumerate(hops, 1):
            w.writerow(["arrival_err_s", k, f"{v:.6f}"])

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    xs = sorted(traj)
    a1.plot(xs, [traj[h] for h in xs], marker="o")
    a1.set_xlabel("forecast horizon (s)")
    a1.set_ylabel("trajectory error (ft)")
    a1.set_xticks(xs)
    ks = list(range(1, len(hops) + 1))
    a2.plot(ks, hops, marker="o", color="tab:red")
    a2.set_xlabel("hop")
    a2.set_ylabel("arrival error (s)")
    a2.set_xticks(ks)
    fig.suptitle(f"source: {report.source}")
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return csv_path, out


# -------------------------------------------------------------- subcommands

def cmd_decode(args) -> int:
    path = _existing(args.input, "--in", args._parser)
    lines = [codec.serialize(m) for m in read_messages(path)]
    _emit("\n".join(lines), args.out)
    print(f"decoded {len(lines)} messages", file=sys.stderr)
    return EXIT_OK


def cmd_gen(args) -> int:
    noise = synth.NoiseSpec(args.noise_sigma_m, args.spat_jitter_s)
    log, truth = replay.synth_session(
        args.preset, args.duration_s, args.bsm_hz, args.spat_hz, noise, args.seed, args.max_trips
    )
    out = Path(args.out or replay.session_filename(log.meta.session_id))
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    log.write(out)
    truth_path.write_text(truth.to_json() + "\n", encoding="utf-8")
    counts = ", ".join(f"{k} {v}" for k, v in sorted(log.meta.counts.items()))
    print(f"{out} ({counts}); ground truth {truth_path}")
    return EXIT_OK


def cmd_replay_serve(args) -> int:
    log = replay.SessionLog.read(_existing(args.log, "--log", args._parser))
    with replay.serve(log, args.bind, args.speed) as server:
        host, port = server.address
        print(f"serving {len(log.entries)} messages on {host}:{port} at speed {args.speed}", flush=True)
        try:
            while args.max_clients is None or server.finished < args.max_clients:
                time.sleep(0.1)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


def cmd_replay_ingest(args) -> int:
    res = replay.ingest(args.connect, args.out, args.timeout_s)
    print(f"{res.path}: {len(res.log.entries)} messages, {res.corrupt_count} corrupt")
    return EXIT_OK


def cmd_encode(args) -> int:
    scenario = load_scenario(
        _existing(args.input, "--in", args._parser), _existing(args.order, "--order", args._parser)
    )
    _emit(scenario_to_json(scenario), args.out)
    return EXIT_OK


def cmd_explain(args) -> int:
    o = _oracle(args)
    ref = o.explain(args.vehicle)
    s = o.scenario
    if args.vehicle:
        t = s.track(args.vehicle)
        window = (t.samples[0].ts_ms, t.samples[-1].ts_ms)
    else:
        window = (0, 0)
    _emit(_answer(args, o, "explanation", ref, query_text("explanation", args.vehicle), window), args.out)
    return EXIT_OK


def _window(args, ts: int) -> tuple[int, int]:
    return ts - round(args.context_window_s * 1000), ts


def cmd_describe(args) -> int:
    ts = _at(args.at, args._parser)
    o = _oracle(args)
    ref = o.describe(args.vehicle, ts)
    _emit(_answer(args, o, "description", ref, query_text("description", args.vehicle, ts), _window(args, ts)), args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    ts = _at(args.at, args._parser)
    o = _oracle(args)
    ref = o.predict(args.vehicle, ts)
    _emit(_answer(args, o, "prediction", ref, query_text("prediction", args.vehicle, ts), _window(args, ts)), args.out)
    return EXIT_OK


def cmd_advise(args) -> int:
    ts = _at(args.at, args._parser)
    iid, sep, lane = args.start.rpartition(":")
    if not sep or not lane.isdigit():
        raise UsageError(args._parser, f"--start: expected INTERSECTION:LANE, got {args.start!r}")
    o = _oracle(args)
    end = args.end or o.scenario.layout.order[-1]
    plan = plan_route(o.graph, o.scenario.timeline, o.cycles, (iid, int(lane)), end, ts, args.cruise_mps)
    ref = promptgen.render_navigation_advisory(plan, colloquial=not args.state_names)
    query = query_text("advisory", f"in lane {lane} at {iid}", ts, o.scenario.layout.name_of(end))
    _emit(_answer(args, o, "advisory", ref, query, _window(args, ts)), args.out)
    if args.plan_json:
        Path(args.plan_json).write_text(plan.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    scen_path = _existing(args.scenario, "--scenario", args._parser)
    truth_path = Path(args.truth) if args.truth else scen_path.with_suffix(".truth.json")
    truth = synth.GroundTruth.from_json(_existing(str(truth_path), "--truth", args._parser).read_text(encoding="utf-8"))
    scenario = load_scenario(scen_path, order=list(truth.spec.ids))
    cycles = None
    if args.phase_plan:
        cycles = prediction.load_phase_plan(_existing(args.phase_plan, "--phase-plan", args._parser))
    backend = make_backend(args.source, args.llm_endpoint, args.llm_model)
    if backend is not None and args.record:
        backend = gateway.RecordingBackend(backend, args.record)
    report = evalkit.run_suite(
        scenario,
        "oracle" if backend is None else backend,
        truth,
        cruise_mps=args.cruise_mps,
        stride_s=args.stride_s,
        context_window_s=args.context_window_s,
        cycles=cycles,
        workers=args.workers,
    )
    table = report.render_table()
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.table:
        Path(args.table).write_text(table + "\n", encoding="utf-8")
    if args.plot:
        csv_path, png = plot_errors(report, args.plot)
        print(f"wrote {csv_path} and {png}", file=sys.stderr)
    if not args.report:
        sys.stdout.write(report.to_json() + "\n")
    if not args.table:
        sys.stdout.write(table + "\n")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", default="oracle",
                   help="oracle, stub, transcript:<file> or remote")
    p.add_argument("--llm-endpoint", default=None, help=f"remote endpoint; falls back to ${gateway.ENV_ENDPOINT}")
    p.add_argument("--llm-model", default=None, help=f"remote model name; falls back to ${gateway.ENV_MODEL}")
    p.add_argument("--context-window-s", type=float, default=gateway.CONTEXT_WINDOW_S,
                   help="seconds of data placed in the prompt context")


def _add_task(sub, name: str, helptext: str, fn, vehicle_required: bool = True, at: bool = True):
    p = sub.add_parser(name, help=helptext, description=helptext,
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--scenario", required=True, help="scenario .json, or a .v2xlog/.jsonl with --order")
    p.add_argument("--order", default=None, help="corridor order file for raw message input")
    p.add_argument("--vehicle", required=vehicle_required, default=None, help="vehicle temp id")
    if at:
        p.add_argument("--at", required=True, help='query time, e.g. "2023-07-04 10:48:50.95" (UTC)')
    p.add_argument("--out", default=None, help="write the answer here instead of stdout")
    _add_backend(p)
    p.set_defaults(func=fn, _parser=p)
    return p


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="v2xcorridor", description="Connected-vehicle corridor toolkit.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("decode", help="decode JSONL or binary frames to canonical JSONL", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input .jsonl, .v2xlog or frame file")
    p.add_argument("--out", default=None, help="output JSONL; None prints to stdout")
    p.set_defaults(func=cmd_decode, _parser=p)

    p = sub.add_parser("gen", help="generate a synthetic session with ground truth", formatter_class=fmt)
    p.add_argument("--preset", default="park-street", choices=sorted(synth.PRESETS), help="corridor preset")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--out", default=None, help="session log path; None means session-<id>.v2xlog")
    p.add_argument("--truth", default=None, help="ground-truth JSON path; None means <out>.truth.json")
    p.add_argument("--duration-s", type=float, default=2100.0, help="session length")
    p.add_argument("--bsm-hz", type=float, default=10.0, help="BSM rate per vehicle")
    p.add_argument("--spat-hz", type=float, default=9.0, help="SPaT rate per intersection")
    p.add_argument("--noise-sigma-m", type=float, default=0.0, help="position noise standard deviation")
    p.add_argument("--spat-jitter-s", type=float, default=0.0, help="uniform jitter on remaining time")
    p.add_argument("--max-trips", type=int, default=None, help="cap on the number of trips")
    p.set_defaults(func=cmd_gen, _parser=p)

    rp = sub.add_parser("replay", help="serve or ingest a paced message stream", formatter_class=fmt)
    rsub = rp.add_subparsers(dest="replay_command", metavar="ACTION", parser_class=_Parser)
    rsub.required = True
    p = rsub.add_parser("serve", help="stream a session log to TCP clients", formatter_class=fmt)
    p.add_argument("--log", required=True, help="session .v2xlog")
    p.add_argument("--bind", default="127.0.0.1:7420", help="host:port to listen on (port 0 picks one)")
    p.add_argument("--speed", type=float, default=1.0, help="replay speed factor")
    p.add_argument("--max-clients", type=int, default=None, help="exit after this many client sessions")
    p.set_defaults(func=cmd_replay_serve, _parser=p)
    p = rsub.add_parser("ingest", help="record a replay stream into a session log", formatter_class=fmt)
    p.add_argument("--connect", required=True, help="server host:port")
    p.add_argument("--out", required=True, help="output .v2xlog")
    p.add_argument("--timeout-s", type=float, default=30.0, help="socket timeout")
    p.set_defaults(func=cmd_replay_ingest, _parser=p)

    p = sub.add_parser("encode-scenario", help="build a scenario file from raw messages", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input .jsonl, .v2xlog or frame file")
    p.add_argument("--order", required=True, help="corridor order JSON")
    p.add_argument("--out", default=None, help="scenario JSON; None prints to stdout")
    p.set_defaults(func=cmd_encode, _parser=p)

    _add_task(sub, "explain", "corridor layout and trip explanation", cmd_explain, vehicle_required=False, at=False)
    _add_task(sub, "describe", "lane, speed and signal state of a vehicle", cmd_describe)
    p = _add_task(sub, "predict", "trajectory and next-phase forecast", cmd_predict)
    p.add_argument("--phase-plan", default=None, help="phase-plan JSON overriding inferred cycles")

    p = sub.add_parser("advise", help="lane-level route advisory", description="lane-level route advisory",
                       formatter_class=fmt)
    p.add_argument("--scenario", required=True, help="scenario .json, or a .v2xlog/.jsonl with --order")
    p.add_argument("--order", default=None, help="corridor order file for raw message input")
    p.add_argument("--start", required=True, help="INTERSECTION:LANE to start from")
    p.add_argument("--end", default=None, help="destination intersection; None means the last in the corridor")
    p.add_argument("--at", required=True, help="departure time (UTC)")
    p.add_argument("--cruise-mps", type=float, default=11.2, help="cruise speed")
    p.add_argument("--phase-plan", default=None, help="phase-plan JSON overriding inferred cycles")
    p.add_argument("--state-names", action="store_true", help="name the departure phase by state, not colour")
    p.add_argument("--plan-json", default=None, help="also write the plan as JSON here")
    p.add_argument("--out", default=None, help="write the advisory text here instead of stdout")
    _add_backend(p)
    p.set_defaults(func=cmd_advise, _parser=p)

    p = sub.add_parser("eval", help="score an answer source against ground truth", formatter_class=fmt)
    p.add_argument("--scenario", required=True, help="synthetic .v2xlog or scenario .json")
    p.add_argument("--truth", default=None, help="ground-truth JSON; None means <scenario>.truth.json")
    p.add_argument("--source", default="oracle", help="oracle, stub, transcript:<file> or remote")
    p.add_argument("--llm-endpoint", default=None, help=f"remote endpoint; falls back to ${gateway.ENV_ENDPOINT}")
    p.add_argument("--llm-model", default=None, help=f"remote model name; falls back to ${gateway.ENV_MODEL}")
    p.add_argument("--record", default=None, help="append backend exchanges to this transcript")
    p.add_argument("--report", default=None, help="report JSON path; None prints to stdout")
    p.add_argument("--table", default=None, help="rendered table path; None prints to stdout")
    p.add_argument("--plot", default=None, help="error-curve PNG path; a CSV is written beside it")
    p.add_argument("--cruise-mps", type=float, default=None, help="advisory cruise speed; None uses each vehicle's own speed")
    p.add_argument("--stride-s", type=float, default=1.0, help="spacing of description/prediction queries")
    p.add_argument("--context-window-s", type=float, default=gateway.CONTEXT_WINDOW_S, help="prompt context span")
    p.add_argument("--phase-plan", default=None, help="phase-plan JSON overriding inferred cycles")
    p.add_argument("--workers", type=int, default=1, help="concurrent queries")
    p.set_defaults(func=cmd_eval, _parser=p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = None
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            raise UsageError(getattr(args, "_parser", parser), f"unrecognized arguments: {' '.join(extra)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UnknownSource as exc:
        exc = UsageError(getattr(args, "_parser", parser), str(exc))
        exc.parser.print_help(sys.stderr)
        print(f"{exc.parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        # name stray flags even when argparse stopped at a missing required one
        stray = _unknown_flags((parser, exc.parser), argv)
        message = f"unrecognized arguments: {' '.join(stray)}" if stray else str(exc)
        exc.parser.print_help(sys.stderr)
        print(f"{exc.parser.prog}: error: {message}", file=sys.stderr)
        return EXIT_USAGE
    except (IncompleteReport, *DATA_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
