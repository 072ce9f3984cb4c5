"""Synthetic corridor sessions with exact ground truth.

All along-corridor geometry is kept in integer micro-degrees of latitude
measured southward from the trip start (``u``). With the default preset the
vehicle moves 100 micro-degrees per second on a constant meridian, so every
10 Hz sample lands on the 1e-6 degree grid, lane-11 centroids are passed at
whole seconds, and signal boundaries sit 50 ms off the sample grid. That is
what lets a noiseless run score exactly zero error after text rendering.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

from .codec import (
    BsmRecord,
    IntersectionMap,
    LaneGeometry,
    LaneRef,
    Movement,
    PhaseStateEntry,
    SignalPhaseState,
    SpatRecord,
)
from .geo import EARTH_RADIUS_M, GeoPoint
from .scenario import METERS_PER_MILE

M_PER_UDEG = EARTH_RADIUS_M * math.pi / 180.0 / 1e6
SESSION_START_MS = 1688467500000  # 2023-07-04 10:45:00 UTC

S = SignalPhaseState
THROUGH_GROUPS = (2, 6)
LEFT_GROUPS = (1, 5)
# SB-T ingress, SB exit, SB-L ingress, EB exit, NB-T ingress, NB-L ingress, NB exit, WB exit
LANE_SB_T, LANE_SB_EXIT, LANE_SB_L, LANE_EB_EXIT = 11, 21, 12, 31
LANE_NB_T, LANE_NB_L, LANE_NB_EXIT, LANE_WB_EXIT = 6, 4, 26, 36


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    position_sigma_m: float = 0.0
    spat_jitter_s: float = 0.0

    def __post_init__(self) -> None:
        if not (self.position_sigma_m >= 0 and self.spat_jitter_s >= 0):
            raise InvalidSpec("noise parameters must be non-negative")

    @property
    def noiseless(self) -> bool:
        return self.position_sigma_m == 0 and self.spat_jitter_s == 0


@dataclass(frozen=True)
class CorridorSpec:
    ids: tuple[str, ...]
    names: tuple[str, ...]
    spacing_mi: tuple[float, ...]
    start_lat_deg: float = 43.0711
    lon_deg: float = -89.4
    speed_udeg_s: int = 100
    approach_udeg: int = 1100
    cycle_s: int = 60
    green_s: int = 40
    clearance_s: int = 4
    left_green_s: int = 12
    trip_gap_s: int = 180
    lead_s: int = 30

    def __post_init__(self) -> None:
        n = len(self.ids)
        if n < 2 or len(self.names) != n or len(self.spacing_mi) != n - 1:
            raise InvalidSpec("need >= 2 intersections with one name each and n-1 spacings")
        if len(set(self.ids)) != n:
            raise InvalidSpec("intersection ids must be unique")
        if any(not s > 0 for s in self.spacing_mi):
            raise InvalidSpec("spacings must be positive")
        if self.speed_udeg_s <= 0 or self.approach_udeg < 300:
            raise InvalidSpec("speed must be positive and approaches at least 300 micro-degrees")
        if self.green_s + self.clearance_s >= self.cycle_s or self.left_green_s + self.clearance_s >= self.cycle_s:
            raise InvalidSpec("green plus clearance must be shorter than the cycle")
        if min(self.green_s, self.clearance_s, self.left_green_s) <= 0 or self.trip_gap_s <= 0:
            raise InvalidSpec("phase durations and trip gap must be positive")


PARK_STREET = CorridorSpec(
    ids=("dayton", "regent", "braxton", "vilaswashington", "erin", "fishhatchery"),
    names=(
        "Park St @ Dayton",
        "Park St @ Regent",
        "Park St @ Braxton",
        "Park St @ Vilas Washington",
        "Park St @ Erin",
        "Park St @ Fish Hatchery",
    ),
    spacing_mi=(0.24, 0.09, 0.21, 0.19, 0.35),
)
PRESETS = {"park-street": PARK_STREET}


@dataclass(frozen=True)
class Geometry:
    """Integer micro-degree layout. Per intersection: ``r`` reference, ``b``
    north edge of its territory, ``e`` north edge of the box, ``c`` lane-11
    centroid. ``u_end`` is where a trip stops."""

    lat0_udeg: int
    lon0_udeg: int
    r: tuple[int, ...]
    b: tuple[float, ...]
    e: tuple[float, ...]
    c: tuple[int, ...]
    south_udeg: int
    u_end: int

    def lat(self, u: float) -> float:
        return (self.lat0_udeg - u) / 1e6

    def lon(self, offset_udeg: float) -> float:
        return (self.lon0_udeg + offset_udeg) / 1e6

    def territory(self, u: float) -> int:
        i = 0
        for k in range(1, len(self.r)):
            if u >= self.b[k]:
                i = k
        return i


def build_geometry(spec: CorridorSpec) -> Geometry:
    a = spec.approach_udeg // 10 * 10
    r = [a + 7]
    for s in spec.spacing_mi:
        step = s * METERS_PER_MILE / M_PER_UDEG
        r.append(r[-1] + max(10, round(step / 10) * 10))
    b: list[float] = [r[0] - a - 100]
    b += [(p + q) / 2 for p, q in zip(r, r[1:])]
    e = []
    for ri, bi in zip(r, b):
        # Box edge chosen so the lane-11 centroid (b+e)/2 is a multiple of 100.
        ei = ri - ((ri + bi) % 200)
        e.append(ei)
    c = [round((bi + ei) / 2) for bi, ei in zip(b, e)]
    u_end = r[-1] + a + 3
    return Geometry(
        lat0_udeg=round(spec.start_lat_deg * 1e6),
        lon0_udeg=round(spec.lon_deg * 1e6),
        r=tuple(r),
        b=tuple(b),
        e=tuple(e),
        c=tuple(c),
        south_udeg=r[-1] + a + 100,
        u_end=u_end,
    )


def _rect(g: Geometry, u0: float, u1: float, lon0: float, lon1: float) -> tuple[GeoPoint, ...]:
    n, s = g.lat(u0), g.lat(u1)
    w, e = g.lon(lon0), g.lon(lon1)
    return (GeoPoint(s, w), GeoPoint(s, e), GeoPoint(n, e), GeoPoint(n, w))


SB_T_LON = (-87, -43)
SB_L_LON = (-43, 0)
NB_L_LON = (0, 43)
NB_T_LON = (43, 87)
VEHICLE_LON = -65


def build_maps(spec: CorridorSpec, g: Geometry) -> list[IntersectionMap]:
    n = len(spec.ids)
    maps = []
    for i, iid in enumerate(spec.ids):
        nxt = spec.ids[i + 1] if i + 1 < n else None
        prv = spec.ids[i - 1] if i > 0 else None
        b0 = g.b[i]
        b1 = g.b[i + 1] if i + 1 < n else g.south_udeg
        ri, ei = g.r[i], g.e[i]
        lanes = [
            LaneGeometry(LANE_NB_L, _rect(g, ri + 100, b1, *NB_L_LON), Movement("NB", "L"), 5,
                         (LaneRef(iid, LANE_WB_EXIT),)),
            LaneGeometry(LANE_NB_T, _rect(g, ri + 100, b1, *NB_T_LON), Movement("NB", "T"), 6,
                         (LaneRef(iid, LANE_NB_EXIT),)),
            LaneGeometry(LANE_SB_T, _rect(g, b0, ei, *SB_T_LON), Movement("SB", "T"), 2,
                         (LaneRef(iid, LANE_SB_EXIT),)),
            LaneGeometry(LANE_SB_L, _rect(g, b0, ei, *SB_L_LON), Movement("SB", "L"), 1,
                         (LaneRef(iid, LANE_EB_EXIT),)),
            LaneGeometry(LANE_SB_EXIT, _rect(g, ei, b1, *SB_T_LON), Movement("SB", "T"), None,
                         (LaneRef(nxt, LANE_SB_T),) if nxt else ()),
            LaneGeometry(LANE_NB_EXIT, _rect(g, b0, ri + 100, 0, 87), Movement("NB", "T"), None,
                         (LaneRef(prv, LANE_NB_T),) if prv else ()),
            LaneGeometry(LANE_EB_EXIT, _rect(g, ri - 40, ri + 40, 87, 600), Movement("EB", "T"), None, ()),
            LaneGeometry(LANE_WB_EXIT, _rect(g, ri - 40, ri + 40, -600, -87), Movement("WB", "T"), None, ()),
        ]
        maps.append(IntersectionMap(iid, spec.names[i], GeoPoint(g.lat(ri), g.lon(0)), tuple(lanes)))
    return maps


@dataclass(frozen=True)
class FixedTimePlan:
    """Phases repeat every cycle starting at ``offset_ms`` (mod cycle) after the session start."""

    offset_ms: int
    phases: tuple[tuple[SignalPhaseState, int], ...]

    @cached_property
    def cycle_ms(self) -> int:
        return sum(d for _, d in self.phases)

    def at(self, rel_ms: int) -> tuple[int, int]:
        """Index of the phase active at ``rel_ms`` and the ms at which it ends."""
        cyc = self.cycle_ms
        x = (rel_ms - self.offset_ms) % cyc
        base = rel_ms - x
        acc = 0
        for i, (_, d) in enumerate(self.phases):
            acc += d
            if x < acc:
                return i, base + acc
        raise AssertionError("unreachable")


def build_plans(spec: CorridorSpec, g: Geometry) -> dict[tuple[str, int], FixedTimePlan]:
    cyc = spec.cycle_s * 1000
    through = (
        (S.PROTECTED_MOVEMENT_ALLOWED, spec.green_s * 1000),
        (S.PROTECTED_CLEARANCE, spec.clearance_s * 1000),
        (S.STOP_AND_REMAIN, cyc - (spec.green_s + spec.clearance_s) * 1000),
    )
    left = (
        (S.STOP_AND_REMAIN, cyc - (spec.left_green_s + spec.clearance_s) * 1000),
        (S.PROTECTED_MOVEMENT_ALLOWED, spec.left_green_s * 1000),
        (S.PROTECTED_CLEARANCE, spec.clearance_s * 1000),
    )
    plans = {}
    for i, iid in enumerate(spec.ids):
        # Green wave: trips pass the lane-11 centroid in the middle of green;
        # boundaries sit 50 ms off whole seconds so no sample lands on one.
        arrive_ms = spec.lead_s * 1000 + g.c[i] * 1000 // spec.speed_udeg_s
        offset = (arrive_ms - spec.green_s * 500 + 50) % cyc
        for sg in THROUGH_GROUPS:
            plans[(iid, sg)] = FixedTimePlan(offset, through)
        for sg in LEFT_GROUPS:
            plans[(iid, sg)] = FixedTimePlan(offset, left)
    return plans


@dataclass(frozen=True)
class Trip:
    temp_id: str
    start_ms: int


@dataclass
class GroundTruth:
    spec: CorridorSpec
    noise: NoiseSpec
    seed: int
    t0_ms: int
    duration_s: float
    bsm_hz: float
    spat_hz: float
    trips: tuple[Trip, ...]

    @cached_property
    def geometry(self) -> Geometry:
        return build_geometry(self.spec)

    @cached_property
    def plans(self) -> dict[tuple[str, int], FixedTimePlan]:
        return build_plans(self.spec, self.geometry)

    @cached_property
    def maps(self) -> list[IntersectionMap]:
        return build_maps(self.spec, self.geometry)

    # -- vehicle
    def trip(self, temp_id: str) -> Trip:
        for t in self.trips:
            if t.temp_id == temp_id:
                return t
        raise KeyError(temp_id)

    def trip_end_ms(self, trip: Trip) -> int:
        return trip.start_ms + self.geometry.u_end * 1000 // self.spec.speed_udeg_s

    def u_at(self, trip: Trip, ts_ms: int) -> float:
        num = self.spec.speed_udeg_s * (ts_ms - trip.start_ms)
        return num // 1000 if num % 1000 == 0 else num / 1000

    def position(self, temp_id: str, ts_ms: int) -> GeoPoint:
        trip = self.trip(temp_id)
        g = self.geometry
        return GeoPoint(g.lat(self.u_at(trip, ts_ms)), g.lon(VEHICLE_LON))

    def lane_at(self, temp_id: str, ts_ms: int) -> tuple[str, int]:
        u = self.u_at(self.trip(temp_id), ts_ms)
        g = self.geometry
        i = g.territory(u)
        return self.spec.ids[i], (LANE_SB_T if u < g.e[i] else LANE_SB_EXIT)

    def hop_arrivals(self, temp_id: str) -> list[int]:
        """Times the vehicle passes each lane-11 centroid, first intersection included."""
        trip = self.trip(temp_id)
        return [trip.start_ms + c * 1000 // self.spec.speed_udeg_s for c in self.geometry.c]

    def trip_distance_m(self) -> float:
        return self.geometry.u_end * M_PER_UDEG

    # -- signals
    def phase(self, intersection_id: str, signal_group: int, ts_ms: int):
        """``(phase, remaining_s, next_phase, next_ts_ms)`` from the fixed-time plan."""
        plan = self.plans[(intersection_id, signal_group)]
        i, end_rel = plan.at(ts_ms - self.t0_ms)
        nxt = plan.phases[(i + 1) % len(plan.phases)][0]
        end = self.t0_ms + end_rel
        return plan.phases[i][0], (end - ts_ms) / 1000.0, nxt, end

    # -- corridor
    def segment_mi(self) -> list[float]:
        r = self.geometry.r
        return [(q - p) * M_PER_UDEG / METERS_PER_MILE for p, q in zip(r, r[1:])]

    def lane_edges(self) -> set[tuple[tuple[str, int], tuple[str, int]]]:
        ids = self.spec.ids
        edges = set()
        for i, iid in enumerate(ids):
            for a, b in ((LANE_SB_T, LANE_SB_EXIT), (LANE_SB_L, LANE_EB_EXIT),
                         (LANE_NB_T, LANE_NB_EXIT), (LANE_NB_L, LANE_WB_EXIT)):
                edges.add(((iid, a), (iid, b)))
            if i + 1 < len(ids):
                edges.add(((iid, LANE_SB_EXIT), (ids[i + 1], LANE_SB_T)))
        return edges

    # -- persistence
    def to_json(self) -> str:
        doc = {
            "spec": asdict(self.spec),
            "noise": asdict(self.noise),
            "seed": self.seed,
            "t0_ms": self.t0_ms,
            "duration_s": self.duration_s,
            "bsm_hz": self.bsm_hz,
            "spat_hz": self.spat_hz,
            "trips": [asdict(t) for t in self.trips],
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        spec = d["spec"]
        for k in ("ids", "names", "spacing_mi"):
            spec[k] = tuple(spec[k])
        return cls(
            CorridorSpec(**spec),
            NoiseSpec(**d["noise"]),
            d["seed"],
            d["t0_ms"],
            d["duration_s"],
            d["bsm_hz"],
            d["spat_hz"],
            tuple(Trip(**t) for t in d["trips"]),
        )


@dataclass
class SynthOutput:
    maps: list[IntersectionMap]
    spat: list[SpatRecord]
    bsm: list[BsmRecord]
    truth: GroundTruth
    session_id: str = field(default="")


def generate(
    spec: CorridorSpec = PARK_STREET,
    duration_s: float = 2100.0,
    bsm_hz: float = 10.0,
    spat_hz: float = 9.0,
    noise: Optional[NoiseSpec] = None,
    seed: int = 0,
    t0_ms: int = SESSION_START_MS,
    max_trips: Optional[int] = None,
) -> SynthOutput:
    """Messages and ground truth for one session. Trips start every
    ``trip_gap_s`` after ``lead_s`` and are dropped if they would not finish
    inside ``duration_s``."""
    noise = noise or NoiseSpec()
    if not duration_s > 0 or not bsm_hz > 0 or not spat_hz > 0:
        raise InvalidSpec("duration and rates must be positive")
    rng = random.Random(seed)
    g = build_geometry(spec)
    trip_ms = g.u_end * 1000 // spec.speed_udeg_s
    trips = []
    start = spec.lead_s * 1000
    while start + trip_ms <= duration_s * 1000 and (max_trips is None or len(trips) < max_trips):
        temp_id = f"{rng.getrandbits(32):08X}"
        trips.append(Trip(temp_id, t0_ms + start))
        start += spec.trip_gap_s * 1000
    truth = GroundTruth(spec, noise, seed, t0_ms, duration_s, bsm_hz, spat_hz, tuple(trips))

    bsm = []
    deg_per_m = 1.0 / (M_PER_UDEG * 1e6)
    speed_mps = spec.speed_udeg_s * M_PER_UDEG
    for trip in trips:
        k = 0
        while True:
            ts = trip.start_ms + round(k * 1000 / bsm_hz)
            if ts - trip.start_ms > trip_ms:
                break
            p = truth.position(trip.temp_id, ts)
            if noise.position_sigma_m > 0:
                dn = rng.gauss(0.0, noise.position_sigma_m) * deg_per_m
                de = rng.gauss(0.0, noise.position_sigma_m) * deg_per_m / math.cos(math.radians(p.lat_deg))
                p = GeoPoint(round(p.lat_deg + dn, 7), round(p.lon_deg + de, 7))
            bsm.append(BsmRecord(trip.temp_id, ts, GeoPoint(p.lat_deg, p.lon_deg, 270.0), speed_mps, 180.0, 1.9, 4.8))
            k += 1

    spat = []
    groups = sorted(set(THROUGH_GROUPS + LEFT_GROUPS))
    n_spat = int(duration_s * spat_hz)
    for iid in spec.ids:
        for k in range(n_spat):
            ts = t0_ms + round(k * 1000 / spat_hz)
            states = []
            for sg in groups:
                phase, rem, _, _ = truth.phase(iid, sg, ts)
                if noise.spat_jitter_s > 0:
                    rem = max(0.0, round(rem + rng.uniform(-noise.spat_jitter_s, noise.spat_jitter_s), 3))
                states.append(PhaseStateEntry(sg, phase, rem))
            spat.append(SpatRecord(iid, ts, tuple(states)))
    spat.sort(key=lambda r: r.ts_ms)

    digest = hashlib.sha256(truth.to_json().encode("utf-8")).hexdigest()[:12]
    return SynthOutput(truth.maps, spat, bsm, truth, session_id=f"synth-{digest}")
