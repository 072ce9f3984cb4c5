"""Navigation advisory: lane connectivity graph and hop-by-hop route plans."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from . import geo
from .codec import IntersectionMap, LaneGeometry, SignalPhaseState
from .geo import GeoPoint
from .prediction import CycleModel, PhaseNotInCycle, phase_at
from .scenario import CorridorLayout, SignalTimeline, UnknownIntersection, lookup_phase

logger = logging.getLogger(__name__)

DEFAULT_CRUISE_MPS = 11.2

Node = tuple[str, int]


class AdvisoryError(ValueError):
    pass


class DanglingConnection(AdvisoryError):
    def __init__(self, source: Node, target: Node) -> None:
        self.source, self.target = source, target
        super().__init__(
            f"lane {source[0]}/{source[1]} connects to missing lane {target[0]}/{target[1]}"
        )


class NonPositiveInput(AdvisoryError):
    pass


class NoPath(AdvisoryError):
    pass


@dataclass
class LaneGraph:
    layout: CorridorLayout
    lanes: dict[Node, LaneGeometry]
    internal: dict[Node, dict[Node, float]] = field(default_factory=dict)
    segment: dict[Node, dict[Node, float]] = field(default_factory=dict)
    centroids: dict[Node, GeoPoint] = field(default_factory=dict)

    @property
    def nodes(self) -> set[Node]:
        return set(self.lanes)

    def edges(self) -> set[tuple[Node, Node]]:
        out = set()
        for table in (self.internal, self.segment):
            for a, targets in table.items():
                out.update((a, b) for b in targets)
        return out

    def has_edge(self, a: Node, b: Node) -> bool:
        return b in self.internal.get(a, {}) or b in self.segment.get(a, {})


def build_lane_graph(maps: Sequence[IntersectionMap], layout: CorridorLayout) -> LaneGraph:
    by_id = {m.intersection_id: m for m in maps}
    order = layout.order
    for iid in order:
        if iid not in by_id:
            raise UnknownIntersection(f"no MAP for corridor intersection {iid!r}")
    lanes: dict[Node, LaneGeometry] = {}
    for iid in order:
        for lane in by_id[iid].lanes:
            lanes[(iid, lane.lane_id)] = lane
    graph = LaneGraph(layout, lanes)
    graph.centroids = {node: geo.polygon_centroid(lane.polygon) for node, lane in lanes.items()}
    nxt = {a: b for a, b in zip(order, order[1:])}
    for (iid, lane_id), lane in lanes.items():
        src = (iid, lane_id)
        for ref in lane.connects_to:
            dst = (ref.intersection_id, ref.lane_id)
            target_map = by_id.get(ref.intersection_id)
            if target_map is None or target_map.lane(ref.lane_id) is None:
                raise DanglingConnection(src, dst)
            if ref.intersection_id == iid:
                table = graph.internal
            elif nxt.get(iid) == ref.intersection_id:
                table = graph.segment
            else:
                logger.debug("connection %s -> %s does not follow corridor order; skipped", src, dst)
                continue
            table.setdefault(src, {})[dst] = geo.haversine_m(graph.centroids[src], graph.centroids[dst])
    return graph


def estimate_travel_s(
    segment_m: float,
    cruise_mps: float,
    phase_at_arrival: Optional[tuple[SignalPhaseState, float]] = None,
) -> float:
    """Free-flow time, plus the remaining red if the signal at arrival is a stop state."""
    if not segment_m > 0 or not cruise_mps > 0:
        raise NonPositiveInput(f"segment_m={segment_m}, cruise_mps={cruise_mps}")
    base = segment_m / cruise_mps
    if phase_at_arrival is not None and phase_at_arrival[0].is_stop:
        base += phase_at_arrival[1]
    return base


@dataclass(frozen=True)
class AdvisoryStep:
    ts_ms: int
    intersection_id: str
    intersection_name: str
    ingress_lane: int
    internal_lane: int
    signal_group: Optional[int]
    movement: str
    phase: Optional[SignalPhaseState]
    remaining_s: Optional[float]
    next_intersection_id: str
    next_intersection_name: str
    next_lane: int
    est_travel_s: float
    arrival_ts_ms: int
    arrival_phase: Optional[SignalPhaseState] = None


@dataclass(frozen=True)
class PlanEnd:
    intersection_id: str
    intersection_name: str
    lane_id: int
    ts_ms: int


@dataclass(frozen=True)
class AdvisoryPlan:
    steps: tuple[AdvisoryStep, ...]
    final: PlanEnd

    def to_json(self) -> str:
        def enc(o):
            if isinstance(o, SignalPhaseState):
                return o.value
            raise TypeError(type(o).__name__)

        return json.dumps(asdict(self), default=enc, sort_keys=True, separators=(",", ":"))

    def lane_path(self) -> list[Node]:
        path: list[Node] = []
        for s in self.steps:
            path.append((s.intersection_id, s.ingress_lane))
            if s.internal_lane != s.ingress_lane:
                path.append((s.intersection_id, s.internal_lane))
        path.append((self.final.intersection_id, self.final.lane_id))
        return path


def _fork_key(graph: LaneGraph, node: Node) -> tuple[int, int]:
    return (0 if graph.lanes[node].movement.maneuver == "T" else 1, node[1])


def _phase_at(
    timeline: SignalTimeline,
    plan: dict,
    node: Node,
    lane: LaneGeometry,
    now_ms: int,
    at_ms: int,
) -> Optional[tuple[SignalPhaseState, float]]:
    sg = lane.signal_group
    if sg is None:
        return None
    cycle: Optional[CycleModel] = plan.get((node[0], sg))
    if cycle is None:
        phase, rem = lookup_phase(timeline, node[0], sg, now_ms)
        end = now_ms + round(rem * 1000)
        return (phase, (end - at_ms) / 1000.0) if at_ms < end else None
    try:
        return phase_at(timeline, cycle, node[0], sg, now_ms, at_ms)
    except PhaseNotInCycle:
        logger.warning("phase at %s/%d is outside its cycle", node[0], sg)
        return None


def plan_route(
    graph: LaneGraph,
    timeline: SignalTimeline,
    cycles: dict,
    start: Node,
    end_intersection: str,
    ts_ms: int,
    cruise_mps: float = DEFAULT_CRUISE_MPS,
    start_pos: Optional[GeoPoint] = None,
) -> AdvisoryPlan:
    """Walk the corridor from ``start`` to ``end_intersection``.

    Signal states at later hops are rolled forward from what is observed at
    ``ts_ms`` using ``cycles``, so the plan never reads SPaT from the future.
    ``start_pos``, when given, measures the first hop from the vehicle's
    position instead of its lane's centroid.
    """
    layout = graph.layout
    if start not in graph.lanes:
        raise NoPath(f"start lane {start[0]}/{start[1]} is not in the lane graph")
    i0 = layout.index(start[0])
    i1 = layout.index(end_intersection)
    if i1 < i0:
        raise NoPath(f"{end_intersection} is upstream of {start[0]}")
    names = {s.intersection_id: s.name for s in layout.intersections}
    steps: list[AdvisoryStep] = []
    cur, t = start, ts_ms
    for k in range(i0, i1):
        iid, nxt_iid = layout.order[k], layout.order[k + 1]
        if graph.segment.get(cur):
            candidates = [cur]
        else:
            candidates = [
                n for n in graph.internal.get(cur, {})
                if any(d[0] == nxt_iid for d in graph.segment.get(n, {}))
            ]
        if not candidates:
            raise NoPath(f"no connection from lane {cur[1]} at {iid} toward {nxt_iid}")
        inner = min(candidates, key=lambda n: _fork_key(graph, n))
        targets = [d for d in graph.segment[inner] if d[0] == nxt_iid]
        dst = min(targets, key=lambda n: _fork_key(graph, n))

        lane = graph.lanes[cur]
        here = _phase_at(timeline, cycles, cur, lane, ts_ms, t)
        if here is None and lane.signal_group is None and inner != cur:
            here = _phase_at(timeline, cycles, inner, graph.lanes[inner], ts_ms, t)
        if start_pos is not None and k == i0:
            lead = geo.haversine_m(start_pos, graph.centroids[inner])
        else:
            lead = 0.0 if inner == cur else graph.internal[cur][inner]
        hop_m = lead + graph.segment[inner][dst]
        base_ms = t + round(hop_m / cruise_mps * 1000)
        arrival = _phase_at(timeline, cycles, dst, graph.lanes[dst], ts_ms, base_ms)
        est = estimate_travel_s(hop_m, cruise_mps, arrival)
        arrival_ts = t + round(est * 1000)
        if arrival is not None and arrival[0].is_stop:
            arrival = _phase_at(timeline, cycles, dst, graph.lanes[dst], ts_ms, arrival_ts)
        steps.append(
            AdvisoryStep(
                ts_ms=t,
                intersection_id=iid,
                intersection_name=names[iid],
                ingress_lane=cur[1],
                internal_lane=inner[1],
                signal_group=lane.signal_group,
                movement=str(lane.movement),
                phase=here[0] if here else None,
                remaining_s=here[1] if here else None,
                next_intersection_id=nxt_iid,
                next_intersection_name=names[nxt_iid],
                next_lane=dst[1],
                est_travel_s=est,
                arrival_ts_ms=arrival_ts,
                arrival_phase=arrival[0] if arrival else None,
            )
        )
        cur, t = dst, arrival_ts
    return AdvisoryPlan(tuple(steps), PlanEnd(cur[0], names[cur[0]], cur[1], t))
