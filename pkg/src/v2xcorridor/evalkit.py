"""Metrics for the four query kinds and a suite that scores an answer source
against generator ground truth.

Every source, the deterministic oracle included, is scored from its answer
text: slots are read back with the gateway's extractor and compared to truth.
Metres and seconds are used throughout; feet and miles appear only in the
report.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Protocol, Sequence, Union

from . import gateway, geo, promptgen
from .advisory import AdvisoryPlan, LaneGraph
from .codec import SignalPhaseState
from .geo import GeoPoint
from .prediction import HORIZONS_S, PhaseNotInCycle, TrajectoryForecast, phase_at
from .scenario import EncodedScenario, LaneMatch, ScenarioError
from .tasks import Oracle, query_text
from .timefmt import parse_clock_near, parse_ts

logger = logging.getLogger(__name__)

FT_PER_M = 3.28084
Node = tuple[str, int]


class EvalError(ValueError):
    def __init__(self, metric: str, detail: str) -> None:
        self.metric = metric
        super().__init__(f"{metric}: {detail}")


class LengthMismatch(EvalError):
    pass


class MissingTruthHorizon(EvalError):
    pass


class HopMismatch(EvalError):
    pass


class EmptyTruth(EvalError):
    pass


# ------------------------------------------------------------------ metrics

def _aligned(metric: str, pred: Sequence, truth: Sequence) -> None:
    if len(pred) != len(truth):
        raise LengthMismatch(metric, f"{len(pred)} predictions for {len(truth)} truth samples")
    if not truth:
        raise LengthMismatch(metric, "no samples")


def _mean(xs: Sequence[float]) -> Optional[float]:
    return sum(xs) / len(xs) if xs else None


def _lane_key(x: Union[LaneMatch, tuple, None]) -> Optional[Node]:
    if x is None:
        return None
    if isinstance(x, LaneMatch):
        return (x.intersection_id, x.lane_id)
    iid, lane = x
    return (str(iid), int(lane))


def score_lane_id(pred: Sequence[Union[LaneMatch, tuple, None]], truth: Sequence[Union[LaneMatch, tuple]]) -> float:
    """Fraction of exact (intersection, lane) matches. ``None`` predictions count as misses."""
    _aligned("lane_id_acc", pred, truth)
    return sum(_lane_key(p) == _lane_key(t) for p, t in zip(pred, truth)) / len(truth)


def score_phase(
    pred_states: Sequence[Optional[SignalPhaseState]],
    pred_times: Sequence[Optional[float]],
    truth: Sequence[tuple[SignalPhaseState, float]],
) -> tuple[float, Optional[float]]:
    """State accuracy and mean absolute remaining-time error. Missing states
    count as wrong; missing times are left out of the mean."""
    _aligned("phase_state_acc", pred_states, truth)
    _aligned("phase_time_mae_s", pred_times, truth)
    acc = sum(p is not None and p == t[0] for p, t in zip(pred_states, truth)) / len(truth)
    mae = _mean([abs(p - t[1]) for p, t in zip(pred_times, truth) if p is not None])
    return acc, mae


def _points(p: Union[TrajectoryForecast, Sequence[GeoPoint], None]) -> Optional[Sequence[GeoPoint]]:
    if p is None:
        return None
    return p.points if isinstance(p, TrajectoryForecast) else p


def score_trajectory(
    pred: Sequence[Union[TrajectoryForecast, Sequence[GeoPoint], None]],
    truth: Sequence[Sequence[GeoPoint]],
) -> dict[int, Optional[float]]:
    """Mean great-circle error in feet at each forecast horizon."""
    _aligned("traj_err_ft", pred, truth)
    errs: dict[int, list[float]] = {h: [] for h in HORIZONS_S}
    for p, t in zip(pred, truth):
        if len(t) < len(HORIZONS_S):
            raise MissingTruthHorizon("traj_err_ft", f"truth has {len(t)} of {len(HORIZONS_S)} horizons")
        pts = _points(p)
        if pts is None:
            continue
        for h, a, b in zip(HORIZONS_S, pts, t):
            errs[h].append(geo.haversine_m(a, b) * FT_PER_M)
    return {h: _mean(v) for h, v in errs.items()}


@dataclass(frozen=True)
class HopPrediction:
    arrival_ts_ms: Optional[int]
    phase: Optional[SignalPhaseState]


def _hops(plan: Union[AdvisoryPlan, Sequence[HopPrediction]]) -> Sequence[HopPrediction]:
    if isinstance(plan, AdvisoryPlan):
        return [HopPrediction(s.arrival_ts_ms, s.arrival_phase) for s in plan.steps]
    return plan


def score_advisory(
    plans: Sequence[Union[AdvisoryPlan, Sequence[HopPrediction]]],
    truth_arrivals: Sequence[Sequence[int]],
    truth_phases: Sequence[Sequence[SignalPhaseState]],
) -> tuple[list[Optional[float]], list[float]]:
    """Per hop: mean absolute arrival error in seconds, and the fraction of
    plans whose phase at arrival matches truth."""
    if not truth_arrivals:
        raise EmptyTruth("arrival_err_s", "no plans to score")
    if not (len(plans) == len(truth_arrivals) == len(truth_phases)):
        raise LengthMismatch("arrival_err_s", f"{len(plans)} plans, {len(truth_arrivals)} truth routes")
    n_hops = len(truth_arrivals[0])
    errs: list[list[float]] = [[] for _ in range(n_hops)]
    hits = [0] * n_hops
    for plan, arr, ph in zip(plans, truth_arrivals, truth_phases):
        hops = _hops(plan)
        if not (len(hops) == len(arr) == len(ph) == n_hops):
            raise HopMismatch("arrival_err_s", f"{len(hops)} predicted hops against {len(arr)} true hops")
        for k, (h, a, p) in enumerate(zip(hops, arr, ph)):
            if h.arrival_ts_ms is not None:
                errs[k].append(abs(h.arrival_ts_ms - a) / 1000.0)
            hits[k] += h.phase is not None and h.phase == p
    return [_mean(e) for e in errs], [x / len(plans) for x in hits]


def _edge_set(g: Union[LaneGraph, Iterable[tuple[Node, Node]]]) -> set[tuple[Node, Node]]:
    return g.edges() if isinstance(g, LaneGraph) else set(g)


def score_lane_connection(pred, truth) -> float:
    """Share of true lane connections present in the predicted graph."""
    t = _edge_set(truth)
    if not t:
        raise EmptyTruth("lane_connection_acc", "truth graph has no edges")
    return len(_edge_set(pred) & t) / len(t)


# ------------------------------------------------------------------- report

_FRACTIONS = ("lane_connection_acc", "lane_id_acc", "phase_state_acc")
_ERRORS = ("phase_time_mae_s", "signal_phase_est_err_s", "distance_seg_mae_mi", "distance_total_err_mi")
_DIGITS = {"acc": 6, "_s": 3, "ft": 3, "mi": 4}


def _round(name: str, v: Optional[float]) -> Optional[float]:
    if v is None:
        return None
    for suffix, d in _DIGITS.items():
        if name.endswith(suffix):
            return round(v, d)
    return v


@dataclass
class EvalReport:
    source: str
    lane_connection_acc: Optional[float] = None
    lane_id_acc: Optional[float] = None
    phase_state_acc: Optional[float] = None
    phase_time_mae_s: Optional[float] = None
    traj_err_ft: dict[int, Optional[float]] = field(default_factory=dict)
    signal_phase_est_err_s: Optional[float] = None
    arrival_err_s: list[Optional[float]] = field(default_factory=list)
    phase_at_arrival_acc: list[Optional[float]] = field(default_factory=list)
    distance_seg_mae_mi: Optional[float] = None
    distance_total_err_mi: Optional[float] = None
    n: dict[str, int] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in _FRACTIONS:
            self._check_fraction(name, getattr(self, name))
        for v in self.phase_at_arrival_acc:
            self._check_fraction("phase_at_arrival_acc", v)
        errors = [(k, getattr(self, k)) for k in _ERRORS]
        errors += [("traj_err_ft", v) for v in self.traj_err_ft.values()]
        errors += [("arrival_err_s", v) for v in self.arrival_err_s]
        for name, v in errors:
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    @staticmethod
    def _check_fraction(name: str, v: Optional[float]) -> None:
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def metrics(self) -> dict[str, Any]:
        """Every field except the source label."""
        d = self.to_dict(rounded=False)
        del d["source"]
        return d

    def to_dict(self, rounded: bool = True) -> dict[str, Any]:
        r = _round if rounded else (lambda _name, v: v)
        return {
            "source": self.source,
            "lane_connection_acc": r("acc", self.lane_connection_acc),
            "lane_id_acc": r("acc", self.lane_id_acc),
            "phase_state_acc": r("acc", self.phase_state_acc),
            "phase_time_mae_s": r("_s", self.phase_time_mae_s),
            "traj_err_ft": {str(h): r("ft", v) for h, v in sorted(self.traj_err_ft.items())},
            "signal_phase_est_err_s": r("_s", self.signal_phase_est_err_s),
            "arrival_err_s": [r("_s", v) for v in self.arrival_err_s],
            "phase_at_arrival_acc": [r("acc", v) for v in self.phase_at_arrival_acc],
            "distance_seg_mae_mi": r("mi", self.distance_seg_mae_mi),
            "distance_total_err_mi": r("mi", self.distance_total_err_mi),
            "n": dict(sorted(self.n.items())),
            "failures": dict(sorted(self.failures.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        d = dict(d)
        d["traj_err_ft"] = {int(h): v for h, v in d.get("traj_err_ft", {}).items()}
        return cls(**d)

    def render_table(self) -> str:
        def fmt(v: Optional[float], unit: str = "") -> str:
            if v is None:
                return "n/a"
            return f"{v * 100:.1f}%" if unit == "%" else f"{v:.3f}{unit}"

        rows = [
            ("lane connection accuracy", fmt(self.lane_connection_acc, "%"), "lane_connection_acc"),
            ("lane identification accuracy", fmt(self.lane_id_acc, "%"), "lane_id_acc"),
            ("signal phase accuracy", fmt(self.phase_state_acc, "%"), "phase_state_acc"),
            ("phase remaining-time error", fmt(self.phase_time_mae_s, " s"), "phase_time_mae_s"),
        ]
        for h, v in sorted(self.traj_err_ft.items()):
            rows.append((f"trajectory error at {h} s", fmt(v, " ft"), "traj_err_ft"))
        rows.append(("next-transition time error", fmt(self.signal_phase_est_err_s, " s"), "signal_phase_est_err_s"))
        for k, v in enumerate(self.arrival_err_s, 1):
            rows.append((f"arrival error, hop {k}", fmt(v, " s"), "arrival_err_s"))
        for k, v in enumerate(self.phase_at_arrival_acc, 1):
            rows.append((f"phase at arrival, hop {k}", fmt(v, "%"), "phase_at_arrival_acc"))
        rows.append(("segment distance error", fmt(self.distance_seg_mae_mi, " mi"), "distance_seg_mae_mi"))
        rows.append(("corridor length error", fmt(self.distance_total_err_mi, " mi"), "distance_total_err_mi"))
        w = max(len(r[0]) for r in rows)
        lines = [f"source: {self.source}", f"{'metric'.ljust(w)}  {'value':>12}  {'n':>6}"]
        for label, value, key in rows:
            lines.append(f"{label.ljust(w)}  {value:>12}  {self.n.get(key, 0):>6}")
        if any(self.failures.values()):
            lines.append("unparsed answers: " + ", ".join(f"{k} {v}" for k, v in sorted(self.failures.items()) if v))
        return "\n".join(lines)


# ------------------------------------------------------------------ sources

class AnswerSource(Protocol):
    source_id: str

    def slots(self, oracle: Oracle, task_kind: str, reference: str, query: str, window: tuple[int, int]) -> dict[str, str]:
        ...


class OracleSource:
    """The deterministic answer itself, read back through the slot extractor."""

    source_id = "oracle"

    def slots(self, oracle, task_kind, reference, query, window):
        try:
            return gateway.extract_slots(reference, task_kind)
        except gateway.NoSlotsFound:
            return {}


class BackendSource:
    """Asks a gateway backend, with the scenario context clipped to ``window``."""

    def __init__(self, backend: gateway.Backend) -> None:
        self.backend = backend
        self.source_id = backend.backend_id

    def slots(self, oracle, task_kind, reference, query, window):
        ctx = oracle.scenario.window(*window)
        bundle = promptgen.make_bundle(ctx, task_kind, reference)
        return gateway.complete(gateway.build_request(bundle, query), self.backend).extracted


def as_source(source: Union[str, AnswerSource, gateway.Backend]) -> AnswerSource:
    if source == "oracle":
        return OracleSource()
    if isinstance(source, str):
        raise ValueError(f"unknown answer source {source!r}")
    if hasattr(source, "slots"):
        return source
    return BackendSource(source)


# ------------------------------------------------------------- slot parsing

_POINT = re.compile(r"\((-?\d+(?:\.\d+)?), (-?\d+(?:\.\d+)?)\)")


def _float(slots: dict[str, str], key: str) -> Optional[float]:
    try:
        return float(slots[key])
    except (KeyError, ValueError):
        return None


def _int(slots: dict[str, str], key: str) -> Optional[int]:
    try:
        return int(slots[key])
    except (KeyError, ValueError):
        return None


def _phase(slots: dict[str, str], key: str) -> Optional[SignalPhaseState]:
    try:
        return SignalPhaseState(slots[key])
    except (KeyError, ValueError):
        return None


def _ts(slots: dict[str, str], key: str) -> Optional[int]:
    try:
        return parse_ts(slots[key])
    except (KeyError, ValueError):
        return None


def parse_points(text: str) -> list[GeoPoint]:
    return [GeoPoint(float(a), float(b)) for a, b in _POINT.findall(text)]


# -------------------------------------------------------------------- suite

@dataclass(frozen=True)
class _Query:
    kind: str
    temp_id: str
    ts_ms: int


@dataclass
class _Outcome:
    kind: str
    failed: bool = False
    values: dict[str, Any] = field(default_factory=dict)


class _Suite:
    def __init__(self, scenario, source, truth, cruise_mps, context_window_s, cycles):
        self.oracle = Oracle(scenario, cycles)
        self.source = source
        self.truth = truth
        self.cruise = cruise_mps
        self.window_ms = round(context_window_s * 1000)
        self.ids = {s.name: s.intersection_id for s in scenario.layout.intersections}
        self.truth_sg = {(m.intersection_id, l.lane_id): l.signal_group for m in truth.maps for l in m.lanes}

    # -- query points
    def queries(self, stride_ms: int) -> list[_Query]:
        out: list[_Query] = []
        t = self.truth
        for track in self.oracle.scenario.tracks:
            try:
                trip = t.trip(track.temp_id)
            except KeyError:
                logger.warning("vehicle %s has no ground truth; skipped", track.temp_id)
                continue
            start, end = trip.start_ms, min(t.trip_end_ms(trip), track.samples[-1].ts_ms)
            out.append(_Query("explanation", track.temp_id, end))
            arrivals = t.hop_arrivals(track.temp_id)
            if arrivals[0] <= end:
                out.append(_Query("advisory", track.temp_id, arrivals[0]))
            for ts in range(start + stride_ms, end + 1, stride_ms):
                if self.truth_sg.get(t.lane_at(track.temp_id, ts)) is not None:
                    out.append(_Query("description", track.temp_id, ts))
                if ts + HORIZONS_S[-1] * 1000 <= t.trip_end_ms(trip):
                    out.append(_Query("prediction", track.temp_id, ts))
        return out

    # -- answers
    def _reference(self, q: _Query) -> str:
        o = self.oracle
        try:
            if q.kind == "explanation":
                try:
                    return o.explain(q.temp_id)
                except ScenarioError:
                    return o.explain(None)
            if q.kind == "description":
                return o.describe(q.temp_id, q.ts_ms)
            if q.kind == "prediction":
                return o.predict(q.temp_id, q.ts_ms)
            return o.advise(q.temp_id, q.ts_ms, cruise_mps=self.cruise)
        except (ScenarioError, PhaseNotInCycle, promptgen.PromptError, ValueError) as exc:
            logger.info("no reference %s answer for %s at %d: %s", q.kind, q.temp_id, q.ts_ms, exc)
            return ""

    def _slots(self, q: _Query) -> Optional[dict[str, str]]:
        reference = self._reference(q)
        if q.kind == "explanation":
            trip = self.truth.trip(q.temp_id)
            window = (trip.start_ms, q.ts_ms)
            target = ""
        else:
            window = (q.ts_ms - self.window_ms, q.ts_ms)
            target = self.oracle.scenario.layout.intersections[-1].name
        query = query_text(q.kind, q.temp_id, None if q.kind == "explanation" else q.ts_ms, target)
        try:
            return self.source.slots(self.oracle, q.kind, reference, query, window)
        except gateway.GatewayError as exc:
            logger.warning("%s query for %s at %d failed: %s", q.kind, q.temp_id, q.ts_ms, exc)
            return None

    def run(self, q: _Query) -> _Outcome:
        slots = self._slots(q)
        return getattr(self, f"_{q.kind}")(q, slots or {})

    # -- per task scoring inputs
    def _explanation(self, q: _Query, slots: dict[str, str]) -> _Outcome:
        seg_truth = self.truth.segment_mi()
        seg = [_float(slots, f"DISTANCE#{k}") for k in range(1, len(seg_truth) + 1)]
        total = _float(slots, "CORRIDOR_LENGTH")
        return _Outcome(
            "explanation",
            failed=total is None or None in seg,
            values={
                "seg_err": [abs(p - t) for p, t in zip(seg, seg_truth) if p is not None],
                "total_err": None if total is None else abs(total - sum(seg_truth)),
            },
        )

    def _description(self, q: _Query, slots: dict[str, str]) -> _Outcome:
        t = self.truth
        truth_lane = t.lane_at(q.temp_id, q.ts_ms)
        phase, rem, _, _ = t.phase(truth_lane[0], self.truth_sg[truth_lane], q.ts_ms)
        iid = self.ids.get(slots.get("INTERSECTION_NAME", ""))
        lane_id = _int(slots, "LANE_ID")
        pred_lane = None if iid is None or lane_id is None else (iid, lane_id)
        pred_phase = _phase(slots, "PHASE_STATE")
        pred_time = _float(slots, "TIMING")
        return _Outcome(
            "description",
            failed=pred_lane is None or pred_phase is None or pred_time is None,
            values={
                "lane": (pred_lane, truth_lane),
                "phase": (pred_phase, pred_time, (phase, rem)),
            },
        )

    def _prediction(self, q: _Query, slots: dict[str, str]) -> _Outcome:
        t = self.truth
        truth_path = [t.position(q.temp_id, q.ts_ms + h * 1000) for h in HORIZONS_S]
        pts = parse_points(slots.get("TRAJECTORY", ""))
        traj = pts if len(pts) >= len(HORIZONS_S) else None
        # pair every signalized lane of the true intersection with the answer's line for it
        iid = t.lane_at(q.temp_id, q.ts_ms)[0]
        lines = {}
        k = 1
        while f"LANE_ID#{k}" in slots:
            lines[_int(slots, f"LANE_ID#{k}")] = slots.get(f"NEXT_TIMESTAMP#{k}")
            k += 1
        answered_iid = self.ids.get(slots.get("INTERSECTION_NAME#1", ""))
        errs, missing = [], 0
        for (i, lane_id), sg in sorted(self.truth_sg.items()):
            if i != iid or sg is None:
                continue
            text = lines.get(lane_id) if answered_iid == iid else None
            try:
                pred_next = parse_clock_near(text, q.ts_ms) if text else None
            except ValueError:
                pred_next = None
            if pred_next is None:
                missing += 1
                continue
            errs.append(abs(pred_next - t.phase(iid, sg, q.ts_ms)[3]) / 1000.0)
        return _Outcome(
            "prediction",
            failed=traj is None or missing > 0,
            values={"traj": (traj, truth_path), "next_err": errs},
        )

    def _advisory(self, q: _Query, slots: dict[str, str]) -> _Outcome:
        t = self.truth
        arrivals = t.hop_arrivals(q.temp_id)[1:]
        truth_phases = []
        for a in arrivals:
            node = t.lane_at(q.temp_id, a)
            truth_phases.append(t.phase(node[0], self.truth_sg[node], a)[0])
        hops = []
        for k in range(1, len(arrivals) + 1):
            arr = _ts(slots, f"ARRIVAL_TIMESTAMP#{k}")
            iid = self.ids.get(slots.get(f"NEXT_INTERSECTION_NAME#{k}", ""))
            lane_id = _int(slots, f"NEXT_LANE_ID#{k}")
            phase = None
            if arr is not None and iid is not None and lane_id is not None:
                phase = self._phase_at(iid, lane_id, q.ts_ms, arr)
            hops.append(HopPrediction(arr, phase))
        return _Outcome(
            "advisory",
            failed=any(h.arrival_ts_ms is None for h in hops),
            values={"plan": (hops, arrivals, truth_phases)},
        )

    def _phase_at(self, iid: str, lane_id: int, now_ms: int, at_ms: int) -> Optional[SignalPhaseState]:
        o = self.oracle
        try:
            sg = o.lane(iid, lane_id).signal_group
        except KeyError:
            return None
        cycle = None if sg is None else o.cycles.get((iid, sg))
        if cycle is None or at_ms < now_ms:
            return None
        try:
            return phase_at(o.scenario.timeline, cycle, iid, sg, now_ms, at_ms)[0]
        except (ScenarioError, PhaseNotInCycle):
            return None


def run_suite(
    scenario: EncodedScenario,
    source: Union[str, AnswerSource, gateway.Backend],
    truth,
    *,
    cruise_mps: Optional[float] = None,
    stride_s: float = 1.0,
    context_window_s: float = gateway.CONTEXT_WINDOW_S,
    cycles=None,
    workers: int = 1,
) -> EvalReport:
    """Ask ``source`` every query of the scenario and score the answers.

    Queries, per vehicle with ground truth: one explanation, one advisory when
    the vehicle passes its first intersection's approach lane, and every
    ``stride_s`` a description (while on a signalized lane) and a prediction
    (while truth covers all horizons). ``truth`` is a generator ground truth.
    With ``workers`` > 1 queries run concurrently; results are merged in query
    order so the report does not depend on scheduling.
    """
    src = as_source(source)
    suite = _Suite(scenario, src, truth, cruise_mps, context_window_s, cycles)
    queries = suite.queries(round(stride_s * 1000))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(suite.run, queries))
    else:
        outcomes = [suite.run(q) for q in queries]

    failures: Counter = Counter({k: 0 for k in promptgen.TASK_KINDS})
    by_kind: dict[str, list[_Outcome]] = {k: [] for k in promptgen.TASK_KINDS}
    for o in outcomes:
        by_kind[o.kind].append(o)
        failures[o.kind] += o.failed

    report = EvalReport(source=src.source_id, failures=dict(failures))
    n = report.n

    truth_edges = truth.lane_edges()
    report.lane_connection_acc = score_lane_connection(suite.oracle.graph, truth_edges)
    n["lane_connection_acc"] = len(truth_edges)

    desc = by_kind["description"]
    if desc:
        lanes = [o.values["lane"] for o in desc]
        phases = [o.values["phase"] for o in desc]
        report.lane_id_acc = score_lane_id([p for p, _ in lanes], [t for _, t in lanes])
        report.phase_state_acc, report.phase_time_mae_s = score_phase(
            [p[0] for p in phases], [p[1] for p in phases], [p[2] for p in phases]
        )
        n["lane_id_acc"] = n["phase_state_acc"] = len(desc)
        n["phase_time_mae_s"] = sum(p[1] is not None for p in phases)

    pred = by_kind["prediction"]
    if pred:
        trajs = [o.values["traj"] for o in pred]
        report.traj_err_ft = score_trajectory([p for p, _ in trajs], [t for _, t in trajs])
        n["traj_err_ft"] = sum(p is not None for p, _ in trajs)
        nxt = [e for o in pred for e in o.values["next_err"]]
        report.signal_phase_est_err_s = _mean(nxt)
        n["signal_phase_est_err_s"] = len(nxt)

    adv = by_kind["advisory"]
    if adv:
        plans = [o.values["plan"] for o in adv]
        report.arrival_err_s, report.phase_at_arrival_acc = score_advisory(
            [p[0] for p in plans], [p[1] for p in plans], [p[2] for p in plans]
        )
        n["arrival_err_s"] = n["phase_at_arrival_acc"] = len(adv)

    expl = by_kind["explanation"]
    if expl:
        seg = [e for o in expl for e in o.values["seg_err"]]
        tot = [o.values["total_err"] for o in expl if o.values["total_err"] is not None]
        report.distance_seg_mae_mi = _mean(seg)
        report.distance_total_err_mi = _mean(tot)
        n["distance_seg_mae_mi"] = len(seg)
        n["distance_total_err_mi"] = len(tot)

    report.__post_init__()
    return report
