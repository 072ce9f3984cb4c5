"""Scenario encoding: corridor layout, lane matching, motion and signal lookups.

Turns a decoded message batch into an :class:`EncodedScenario` holding the
four blocks the prompts are built from (corridor layout, lane geometry,
signal timeline, vehicle tracks), plus the scenario JSON file format.
"""

from __future__ import annotations

import bisect
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

from . import codec, geo
from .codec import BsmRecord, IntersectionMap, SignalPhaseState, SpatRecord
from .geo import GeoPoint

logger = logging.getLogger(__name__)

METERS_PER_MILE = 1609.344
MPH_PER_MPS = 3600.0 / METERS_PER_MILE
SPAT_TOLERANCE_MS = 1000
SPEED_SPAN_MS = 1000
VISIT_RADIUS_M = 60.0
TIE_EPS_M = 1e-9


class ScenarioError(ValueError):
    pass


class UnknownIntersection(ScenarioError):
    pass


class TooFewIntersections(ScenarioError):
    pass


class NoLanes(ScenarioError):
    pass


class EmptyTrack(ScenarioError):
    pass


class OutOfSpan(ScenarioError):
    pass


class NoSpatWithinTolerance(ScenarioError):
    pass


class UnknownSignalGroup(ScenarioError):
    pass


class TripTooShort(ScenarioError):
    pass


# ------------------------------------------------------------------ layout

@dataclass(frozen=True)
class CorridorStop:
    intersection_id: str
    name: str
    ref_point: GeoPoint


@dataclass(frozen=True)
class CorridorLayout:
    intersections: tuple[CorridorStop, ...]
    direction_label: str
    segment_mi: tuple[float, ...]
    total_mi: float

    @property
    def order(self) -> list[str]:
        return [s.intersection_id for s in self.intersections]

    def index(self, intersection_id: str) -> int:
        for i, s in enumerate(self.intersections):
            if s.intersection_id == intersection_id:
                return i
        raise UnknownIntersection(intersection_id)

    def name_of(self, intersection_id: str) -> str:
        return self.intersections[self.index(intersection_id)].name


def build_layout(maps: Sequence[IntersectionMap], order: Sequence[str]) -> CorridorLayout:
    by_id = {m.intersection_id: m for m in maps}
    for iid in order:
        if iid not in by_id:
            raise UnknownIntersection(f"corridor order names unknown intersection {iid!r}")
    if len(order) < 2:
        raise TooFewIntersections(f"corridor needs at least 2 intersections, got {len(order)}")
    stops = tuple(CorridorStop(iid, by_id[iid].name, by_id[iid].ref_point) for iid in order)
    segments = tuple(
        geo.haversine_m(a.ref_point, b.ref_point) / METERS_PER_MILE for a, b in zip(stops, stops[1:])
    )
    b = geo.bearing_deg(stops[0].ref_point, stops[-1].ref_point)
    north_south = min(b, abs(b - 180.0), 360.0 - b) <= 45.0
    return CorridorLayout(
        intersections=stops,
        direction_label="North-South" if north_south else "East-West",
        segment_mi=segments,
        total_mi=sum(segments),
    )


# ---------------------------------------------------------------- matching

@dataclass(frozen=True)
class LaneMatch:
    intersection_id: str
    lane_id: int
    distance_m: float
    method: str  # "inside-polygon" | "nearest-boundary"


def nearest_intersection(pos: GeoPoint, maps: Sequence[IntersectionMap]) -> IntersectionMap:
    best = None
    best_d = float("inf")
    for m in maps:
        if not m.lanes:
            continue
        d = geo.haversine_m(pos, m.ref_point)
        if d < best_d:
            best, best_d = m, d
    if best is None:
        raise NoLanes("no intersection has any lanes")
    return best


def match_lane(pos: GeoPoint, maps: Sequence[IntersectionMap]) -> LaneMatch:
    """Nearest intersection by reference point, then the containing lane or
    the lane with the nearest boundary. Ties go to the lowest lane id."""
    m = nearest_intersection(pos, maps)
    for lane in m.lanes:  # lanes are sorted by id
        if geo.point_in_polygon(pos, lane.polygon):
            return LaneMatch(m.intersection_id, lane.lane_id, 0.0, "inside-polygon")
    best_lane, best_d = None, float("inf")
    for lane in m.lanes:
        d = geo.point_to_ring_m(pos, lane.polygon)
        if d < best_d - TIE_EPS_M:
            best_lane, best_d = lane, d
    assert best_lane is not None
    return LaneMatch(m.intersection_id, best_lane.lane_id, best_d, "nearest-boundary")


# ----------------------------------------------------------------- motion

def mps_to_mph(speed_mps: float) -> float:
    return speed_mps * MPH_PER_MPS


@dataclass(frozen=True)
class VehicleTrack:
    temp_id: str
    samples: tuple[BsmRecord, ...]

    def __post_init__(self) -> None:
        ts = [s.ts_ms for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("track timestamps must be strictly increasing")
        if any(s.temp_id != self.temp_id for s in self.samples):
            raise ValueError("track mixes temp_ids")

    @cached_property
    def times(self) -> list[int]:
        return [s.ts_ms for s in self.samples]

    def _prefix(self, i: int) -> "VehicleTrack":
        # a prefix of a valid track is valid, so skip re-validation
        if i >= len(self.samples):
            return self
        t = object.__new__(VehicleTrack)
        object.__setattr__(t, "temp_id", self.temp_id)
        object.__setattr__(t, "samples", self.samples[:i])
        return t

    def until(self, ts_ms: int) -> "VehicleTrack":
        """Samples at or before ``ts_ms``."""
        return self._prefix(bisect.bisect_right(self.times, ts_ms))

    def between(self, t0: int, t1: int) -> "VehicleTrack":
        return VehicleTrack(self.temp_id, tuple(s for s in self.samples if t0 <= s.ts_ms <= t1))

    def at(self, ts_ms: int) -> BsmRecord:
        """Latest sample at or before ``ts_ms``."""
        i = bisect.bisect_right(self.times, ts_ms)
        if i == 0:
            raise OutOfSpan(f"no sample at or before {ts_ms}")
        return self.samples[i - 1]


def build_tracks(bsms: Iterable[BsmRecord]) -> list[VehicleTrack]:
    groups: dict[str, dict[int, BsmRecord]] = defaultdict(dict)
    for b in bsms:
        slot = groups[b.temp_id]
        if b.ts_ms in slot:
            logger.debug("duplicate BSM %s@%d dropped", b.temp_id, b.ts_ms)
            continue
        slot[b.ts_ms] = b
    return [
        VehicleTrack(tid, tuple(slot[t] for t in sorted(slot)))
        for tid, slot in sorted(groups.items(), key=lambda kv: min(kv[1]))
    ]


def derive_speed_mps(track: VehicleTrack, ts_ms: int) -> float:
    """Speed from positional change around ``ts_ms``.

    Uses the nearest samples strictly before and after ``ts_ms`` when both
    exist; a sample exactly at ``ts_ms`` with a neighbour on one side only
    gives a one-sided difference; otherwise the BSM's own speed field.
    """
    s = track.samples
    if not s:
        raise EmptyTrack(f"track {track.temp_id} has no samples")
    if ts_ms < s[0].ts_ms - SPEED_SPAN_MS or ts_ms > s[-1].ts_ms + SPEED_SPAN_MS:
        raise OutOfSpan(f"{ts_ms} outside track span [{s[0].ts_ms}, {s[-1].ts_ms}] +/- {SPEED_SPAN_MS} ms")
    times = track.times
    lo = bisect.bisect_left(times, ts_ms)
    hi = bisect.bisect_right(times, ts_ms)
    exact = hi > lo
    before = s[lo - 1] if lo > 0 else None
    after = s[hi] if hi < len(s) else None
    if before is not None and after is not None:
        a, b = before, after
    elif exact and (before is not None or after is not None):
        a, b = (before, s[lo]) if before is not None else (s[lo], after)
    else:
        nearest = before or after or s[lo]
        return nearest.speed_mps
    return geo.haversine_m(a.pos, b.pos) / ((b.ts_ms - a.ts_ms) / 1000.0)


# ----------------------------------------------------------------- signals

@dataclass(frozen=True)
class PhaseSample:
    ts_ms: int
    phase: SignalPhaseState
    remaining_s: float


@dataclass
class SignalTimeline:
    """Per (intersection_id, signal_group) time-ordered phase samples."""

    series: dict[tuple[str, int], list[PhaseSample]] = field(default_factory=dict)
    _times: dict[tuple[str, int], list[int]] = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_spat(cls, records: Iterable[SpatRecord]) -> "SignalTimeline":
        series: dict[tuple[str, int], list[PhaseSample]] = defaultdict(list)
        for r in sorted(records, key=lambda r: r.ts_ms):
            for st in r.states:
                series[(r.intersection_id, st.signal_group)].append(PhaseSample(r.ts_ms, st.phase, st.remaining_s))
        return cls(dict(series))

    def keys(self) -> list[tuple[str, int]]:
        return sorted(self.series)

    def samples(self, intersection_id: str, signal_group: int) -> list[PhaseSample]:
        return self.series.get((intersection_id, signal_group), [])

    def times(self, key: tuple[str, int]) -> list[int]:
        t = self._times.get(key)
        if t is None or len(t) != len(self.series[key]):
            t = [p.ts_ms for p in self.series[key]]
            self._times[key] = t
        return t

    def intersections(self) -> set[str]:
        return {k[0] for k in self.series}

    def window(self, t0: int, t1: int) -> "SignalTimeline":
        out = {}
        for k, v in self.series.items():
            t = self.times(k)
            sub = v[bisect.bisect_left(t, t0):bisect.bisect_right(t, t1)]
            if sub:
                out[k] = sub
        return SignalTimeline(out)

    def to_spat(self) -> list[SpatRecord]:
        grouped: dict[tuple[int, str], list[codec.PhaseStateEntry]] = defaultdict(list)
        for (iid, sg), v in self.series.items():
            for p in v:
                grouped[(p.ts_ms, iid)].append(codec.PhaseStateEntry(sg, p.phase, p.remaining_s))
        return [SpatRecord(iid, ts, tuple(states)) for (ts, iid), states in sorted(grouped.items())]

    def jitter_violations(self, tolerance_s: float = 0.2) -> int:
        """Count consecutive same-phase pairs whose remaining time grows by more
        than ``tolerance_s`` beyond the elapsed-time decrement."""
        bad = 0
        for v in self.series.values():
            for a, b in zip(v, v[1:]):
                if a.phase == b.phase and b.remaining_s > a.remaining_s + tolerance_s:
                    bad += 1
        return bad


def lookup_phase(
    timeline: SignalTimeline, intersection_id: str, signal_group: int, ts_ms: int
) -> tuple[SignalPhaseState, float]:
    """Phase and remaining time at ``ts_ms`` from the latest sample no more than
    one second older, with the remaining time decayed linearly (floored at 0)."""
    key = (intersection_id, signal_group)
    if key not in timeline.series:
        raise UnknownSignalGroup(f"no SPaT for {intersection_id} signal group {signal_group}")
    times = timeline.times(key)
    i = bisect.bisect_right(times, ts_ms)
    if i == 0 or ts_ms - times[i - 1] > SPAT_TOLERANCE_MS:
        raise NoSpatWithinTolerance(
            f"no SPaT for {intersection_id}/{signal_group} within {SPAT_TOLERANCE_MS} ms before {ts_ms}"
        )
    sample = timeline.series[key][i - 1]
    rem_ms = max(0, round(sample.remaining_s * 1000) - (ts_ms - sample.ts_ms))
    return sample.phase, rem_ms / 1000.0


# ---------------------------------------------------------------- scenario

@dataclass
class EncodedScenario:
    layout: CorridorLayout
    maps: list[IntersectionMap]
    timeline: SignalTimeline
    tracks: list[VehicleTrack]

    def map_of(self, intersection_id: str) -> IntersectionMap:
        for m in self.maps:
            if m.intersection_id == intersection_id:
                return m
        raise UnknownIntersection(intersection_id)

    def track(self, temp_id: str) -> VehicleTrack:
        for t in self.tracks:
            if t.temp_id == temp_id:
                return t
        raise KeyError(f"no track for vehicle {temp_id}")

    def validate(self) -> None:
        ids = {m.intersection_id for m in self.maps}
        missing = self.timeline.intersections() - ids
        if missing:
            raise UnknownIntersection(f"SPaT intersections without MAP: {sorted(missing)}")
        for m in self.maps:
            for lane in m.lanes:
                sg = lane.signal_group
                if sg is not None and (m.intersection_id, sg) not in self.timeline.series:
                    logger.warning("lane %s/%d signal group %d has no SPaT", m.intersection_id, lane.lane_id, sg)

    def window(self, t0: int, t1: int) -> "EncodedScenario":
        tracks = [t.between(t0, t1) for t in self.tracks]
        return EncodedScenario(self.layout, self.maps, self.timeline.window(t0, t1), [t for t in tracks if t.samples])


def encode_scenario(messages: Iterable[codec.V2xMessage], order: Sequence[str]) -> EncodedScenario:
    maps: dict[str, IntersectionMap] = {}
    spats: list[SpatRecord] = []
    bsms: list[BsmRecord] = []
    for msg in messages:
        if isinstance(msg, IntersectionMap):
            maps[msg.intersection_id] = msg
        elif isinstance(msg, SpatRecord):
            spats.append(msg)
        else:
            bsms.append(msg)
    map_list = [maps[k] for k in order if k in maps] + [m for k, m in maps.items() if k not in order]
    layout = build_layout(map_list, order)
    scenario = EncodedScenario(layout, map_list, SignalTimeline.from_spat(spats), build_tracks(bsms))
    scenario.validate()
    return scenario


def _layout_obj(layout: CorridorLayout) -> dict:
    return {
        "direction_label": layout.direction_label,
        "intersections": [
            {"intersection_id": s.intersection_id, "name": s.name, "ref": codec._point_obj(s.ref_point)}
            for s in layout.intersections
        ],
        "segment_mi": list(layout.segment_mi),
        "total_mi": layout.total_mi,
    }


def _layout_from_obj(obj: dict) -> CorridorLayout:
    stops = tuple(
        CorridorStop(s["intersection_id"], s["name"], GeoPoint(s["ref"]["lat"], s["ref"]["lon"], s["ref"].get("elev_m")))
        for s in obj["intersections"]
    )
    return CorridorLayout(stops, obj["direction_label"], tuple(obj["segment_mi"]), obj["total_mi"])


def scenario_to_json(s: EncodedScenario) -> str:
    """Scenario file: ``{layout, maps, spat, bsm}`` with canonical message objects."""
    doc = {
        "layout": _layout_obj(s.layout),
        "maps": [json.loads(codec.serialize(m)) for m in s.maps],
        "spat": [json.loads(codec.serialize(r)) for r in s.timeline.to_spat()],
        "bsm": [json.loads(codec.serialize(b)) for t in s.tracks for b in t.samples],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def scenario_from_json(text: str) -> EncodedScenario:
    doc = json.loads(text)
    maps = [codec.parse_obj(o) for o in doc["maps"]]
    spats = [codec.parse_obj(o) for o in doc["spat"]]
    bsms = [codec.parse_obj(o) for o in doc["bsm"]]
    layout = _layout_from_obj(doc["layout"])
    s = EncodedScenario(layout, maps, SignalTimeline.from_spat(spats), build_tracks(bsms))
    s.validate()
    return s


# ------------------------------------------------------------------- trips

@dataclass(frozen=True)
class TripSummary:
    start_name: str
    start_ts: int
    visited_names: tuple[str, ...]
    end_name: str
    end_ts: int
    distance_mi: float
    duration_s: float


def summarize_trip(track: VehicleTrack, layout: CorridorLayout, maps: Sequence[IntersectionMap]) -> TripSummary:
    if len(track.samples) < 2:
        raise TripTooShort("track needs at least two samples")
    first, last = track.samples[0], track.samples[-1]
    m0 = match_lane(first.pos, maps)
    m1 = match_lane(last.pos, maps)
    if m0.intersection_id == m1.intersection_id:
        raise TripTooShort(f"trip starts and ends at {m0.intersection_id}")
    names = {m.intersection_id: m.name for m in maps}
    first_seen: dict[str, int] = {}
    for b in track.samples:
        for stop in layout.intersections:
            if stop.intersection_id not in first_seen and geo.haversine_m(b.pos, stop.ref_point) <= VISIT_RADIUS_M:
                first_seen[stop.intersection_id] = b.ts_ms
    visited = tuple(names.get(i, i) for i, _ in sorted(first_seen.items(), key=lambda kv: kv[1]))
    dist_m = sum(geo.haversine_m(a.pos, b.pos) for a, b in zip(track.samples, track.samples[1:]))
    return TripSummary(
        start_name=names.get(m0.intersection_id, m0.intersection_id),
        start_ts=first.ts_ms,
        visited_names=visited,
        end_name=names.get(m1.intersection_id, m1.intersection_id),
        end_ts=last.ts_ms,
        distance_mi=dist_m / METERS_PER_MILE,
        duration_s=(last.ts_ms - first.ts_ms) / 1000.0,
    )
