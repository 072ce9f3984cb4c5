"""State prediction: dead-reckoned trajectories and signal phase transitions."""

from __future__ import annotations

import json
import logging
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

from . import geo
from .codec import SignalPhaseState
from .geo import EnuPoint, GeoPoint
from .scenario import (
    EmptyTrack,
    NoSpatWithinTolerance,
    SignalTimeline,
    VehicleTrack,
    derive_speed_mps,
    lookup_phase,
)

logger = logging.getLogger(__name__)

HORIZONS_S = (1, 2, 3, 4, 5)

__all__ = [
    "CycleModel",
    "InsufficientHistory",
    "NoSpatWithinTolerance",
    "PhaseForecast",
    "PhaseNotInCycle",
    "TrajectoryForecast",
    "forecast_phase",
    "forecast_trajectory",
    "infer_cycle",
    "infer_plan",
    "load_phase_plan",
    "phase_at",
]


class InsufficientHistory(ValueError):
    pass


class PhaseNotInCycle(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryForecast:
    origin: GeoPoint
    points: tuple[GeoPoint, ...]
    ts_ms: int
    speed_mps: float
    heading_deg: float


def forecast_trajectory(track: VehicleTrack, ts_ms: int) -> TrajectoryForecast:
    """Constant-velocity, constant-heading extrapolation at 1 s steps.

    Only samples at or before ``ts_ms`` are used, so the forecast is causal.
    """
    past = track.until(ts_ms)
    if not past.samples:
        raise EmptyTrack(f"no sample of {track.temp_id} at or before {ts_ms}")
    cur = past.samples[-1]
    speed = derive_speed_mps(past, cur.ts_ms)
    h = math.radians(cur.heading_deg)
    ve, vn = speed * math.sin(h), speed * math.cos(h)
    points = tuple(geo.from_enu(cur.pos, EnuPoint(ve * k, vn * k)) for k in HORIZONS_S)
    return TrajectoryForecast(cur.pos, points, cur.ts_ms, speed, cur.heading_deg)


@dataclass(frozen=True)
class CycleModel:
    """Cyclic phase sequence with durations in seconds; the last wraps to the first."""

    phases: tuple[tuple[SignalPhaseState, float], ...]

    def __post_init__(self) -> None:
        if len(self.phases) < 2:
            raise ValueError("a cycle needs at least two phases")
        if any(d <= 0 for _, d in self.phases):
            raise ValueError("phase durations must be positive")
        names = [p for p, _ in self.phases]
        if len(set(names)) != len(names):
            raise ValueError("a phase may appear once per cycle")

    def index(self, phase: SignalPhaseState) -> int:
        for i, (p, _) in enumerate(self.phases):
            if p == phase:
                return i
        raise PhaseNotInCycle(f"{phase.value} is not part of the cycle")

    def successor(self, phase: SignalPhaseState) -> SignalPhaseState:
        return self.phases[(self.index(phase) + 1) % len(self.phases)][0]

    def duration(self, phase: SignalPhaseState) -> float:
        return self.phases[self.index(phase)][1]

    @property
    def length_s(self) -> float:
        return sum(d for _, d in self.phases)


PhasePlan = dict[tuple[str, int], CycleModel]


def _runs(samples) -> list[tuple[SignalPhaseState, int]]:
    runs: list[tuple[SignalPhaseState, int]] = []
    for s in samples:
        if not runs or runs[-1][0] != s.phase:
            runs.append((s.phase, s.ts_ms))
    return runs


def infer_cycle(timeline: SignalTimeline, intersection_id: str, signal_group: int) -> CycleModel:
    """Phase order from the first complete cycle observed; each duration is the
    median of that phase's complete observations (at least two required)."""
    runs = _runs(timeline.samples(intersection_id, signal_group))
    # First and last runs are clipped by the observation window.
    complete: dict[SignalPhaseState, list[int]] = {}
    order: list[SignalPhaseState] = []
    closed = False
    for k in range(1, len(runs) - 1):
        phase, start = runs[k]
        complete.setdefault(phase, []).append(runs[k + 1][1] - start)
        if not closed:
            if phase in order:
                closed = True
            else:
                order.append(phase)
    if not closed:
        raise InsufficientHistory(f"{intersection_id}/{signal_group}: no complete cycle observed")
    if len(order) < 2:
        raise InsufficientHistory(f"{intersection_id}/{signal_group}: fewer than two phases observed")
    for phase in order:
        if len(complete.get(phase, [])) < 2:
            raise InsufficientHistory(
                f"{intersection_id}/{signal_group}: phase {phase.value} has "
                f"{len(complete.get(phase, []))} complete observation(s), need 2"
            )
    return CycleModel(tuple((p, statistics.median(complete[p]) / 1000.0) for p in order))


def infer_plan(timeline: SignalTimeline) -> PhasePlan:
    plan: PhasePlan = {}
    for key in timeline.keys():
        try:
            plan[key] = infer_cycle(timeline, *key)
        except InsufficientHistory as exc:
            logger.info("no cycle for %s/%s: %s", key[0], key[1], exc)
    return plan


def load_phase_plan(src: Union[str, Path, Mapping]) -> PhasePlan:
    """Read ``{intersection_id: {signal_group: [[phase, duration_s], ...]}}``."""
    if isinstance(src, Mapping):
        raw = src
    else:
        raw = json.loads(Path(src).read_text(encoding="utf-8"))
    plan: PhasePlan = {}
    for iid, groups in raw.items():
        for sg, seq in groups.items():
            plan[(iid, int(sg))] = CycleModel(tuple((SignalPhaseState(p), float(d)) for p, d in seq))
    return plan


def dump_phase_plan(plan: PhasePlan) -> dict:
    out: dict = {}
    for (iid, sg), cyc in sorted(plan.items()):
        out.setdefault(iid, {})[str(sg)] = [[p.value, d] for p, d in cyc.phases]
    return out


@dataclass(frozen=True)
class PhaseForecast:
    current_phase: SignalPhaseState
    remaining_s: float
    next_phase: SignalPhaseState
    next_ts_ms: int
    query_ts_ms: int


def forecast_phase(
    timeline: SignalTimeline,
    cycle: CycleModel,
    intersection_id: str,
    signal_group: int,
    ts_ms: int,
) -> PhaseForecast:
    phase, remaining = lookup_phase(timeline, intersection_id, signal_group, ts_ms)
    nxt = cycle.successor(phase)
    return PhaseForecast(phase, remaining, nxt, ts_ms + round(remaining * 1000), ts_ms)


def phase_at(
    timeline: SignalTimeline,
    cycle: CycleModel,
    intersection_id: str,
    signal_group: int,
    now_ms: int,
    at_ms: int,
) -> tuple[SignalPhaseState, float]:
    """Phase and remaining time at ``at_ms`` (>= ``now_ms``), from the phase
    observed at ``now_ms`` rolled forward through the cycle."""
    phase, remaining = lookup_phase(timeline, intersection_id, signal_group, now_ms)
    end = now_ms + round(remaining * 1000)
    if at_ms < end:
        return phase, (end - at_ms) / 1000.0
    i = cycle.index(phase)
    n = len(cycle.phases)
    cycle_ms = round(cycle.length_s * 1000)
    # Skip whole cycles before walking phase by phase.
    if cycle_ms > 0 and at_ms - end > cycle_ms:
        end += (at_ms - end) // cycle_ms * cycle_ms
    while True:
        i = (i + 1) % n
        p, d = cycle.phases[i]
        nxt_end = end + round(d * 1000)
        if at_ms < nxt_end:
            return p, (nxt_end - at_ms) / 1000.0
        end = nxt_end
