"""Deterministic answers to the four query kinds, computed from an encoded
scenario. These are what the oracle source returns and what the stub backend
echoes back."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

from . import promptgen
from .advisory import DEFAULT_CRUISE_MPS, AdvisoryPlan, LaneGraph, build_lane_graph, plan_route
from .codec import LaneGeometry
from .prediction import PhasePlan, TrajectoryForecast, forecast_phase, forecast_trajectory, infer_plan
from .promptgen import LaneForecast
from .scenario import (
    EncodedScenario,
    LaneMatch,
    ScenarioError,
    derive_speed_mps,
    lookup_phase,
    match_lane,
    mps_to_mph,
    summarize_trip,
)
from .timefmt import format_ts_cs


class UnsignalizedLane(ScenarioError):
    """The vehicle's matched lane has no signal group, so no phase applies."""


def query_text(task_kind: str, temp_id: Optional[str] = None, ts_ms: Optional[int] = None, target: str = "") -> str:
    """The concrete question placed after the task instruction."""
    at = "" if ts_ms is None else f" at {format_ts_cs(ts_ms)}"
    if task_kind == "explanation":
        return "Explain the corridor." if temp_id is None else f"Explain the corridor and the trip of vehicle {temp_id}."
    if task_kind == "description":
        return f"Describe vehicle {temp_id}{at}."
    if task_kind == "prediction":
        return f"Predict the trajectory of vehicle {temp_id} and the signal phases of its intersection{at}."
    if task_kind == "advisory":
        return f"Advise vehicle {temp_id} on its route to {target}{at}."
    raise promptgen.PromptError(f"unknown task kind {task_kind!r}")


@dataclass
class Oracle:
    """Answer builder bound to one scenario. Cycle models and the lane graph
    are derived once, on first use."""

    scenario: EncodedScenario
    cycles_override: Optional[PhasePlan] = field(default=None, repr=False)

    @cached_property
    def cycles(self) -> PhasePlan:
        if self.cycles_override is not None:
            return self.cycles_override
        return infer_plan(self.scenario.timeline)

    @cached_property
    def graph(self) -> LaneGraph:
        return build_lane_graph(self.scenario.maps, self.scenario.layout)

    @cached_property
    def _lanes(self) -> dict[tuple[str, int], LaneGeometry]:
        return {(m.intersection_id, lane.lane_id): lane for m in self.scenario.maps for lane in m.lanes}

    @cached_property
    def _names(self) -> dict[str, str]:
        return {m.intersection_id: m.name for m in self.scenario.maps}

    def lane(self, intersection_id: str, lane_id: int) -> LaneGeometry:
        return self._lanes[(intersection_id, lane_id)]

    def name(self, intersection_id: str) -> str:
        return self._names[intersection_id]

    def locate(self, temp_id: str, ts_ms: int) -> LaneMatch:
        return match_lane(self.scenario.track(temp_id).at(ts_ms).pos, self.scenario.maps)

    # -- the four tasks
    def explain(self, temp_id: Optional[str] = None) -> str:
        s = self.scenario
        trip = None if temp_id is None else summarize_trip(s.track(temp_id), s.layout, s.maps)
        return promptgen.render_scenario_explanation(s.layout, trip)

    def describe(self, temp_id: str, ts_ms: int) -> str:
        track = self.scenario.track(temp_id)
        m = self.locate(temp_id, ts_ms)
        lane = self.lane(m.intersection_id, m.lane_id)
        if lane.signal_group is None:
            raise UnsignalizedLane(f"lane {m.lane_id} at {m.intersection_id} has no signal group")
        phase, remaining = lookup_phase(self.scenario.timeline, m.intersection_id, lane.signal_group, ts_ms)
        speed = mps_to_mph(derive_speed_mps(track, ts_ms))
        return promptgen.render_data_description(
            m.lane_id, self.name(m.intersection_id), lane.movement, phase, remaining, speed, ts_ms
        )

    def trajectory(self, temp_id: str, ts_ms: int) -> TrajectoryForecast:
        return forecast_trajectory(self.scenario.track(temp_id), ts_ms)

    def lane_forecasts(self, intersection_id: str, ts_ms: int) -> list[LaneForecast]:
        """Next-phase forecasts for every signalized lane of one intersection
        whose signal group has a cycle model."""
        out = []
        name = self.name(intersection_id)
        for lane in self.scenario.map_of(intersection_id).lanes:
            sg = lane.signal_group
            cycle = None if sg is None else self.cycles.get((intersection_id, sg))
            if cycle is None:
                continue
            f = forecast_phase(self.scenario.timeline, cycle, intersection_id, sg, ts_ms)
            out.append(LaneForecast(name, lane.lane_id, f))
        return out

    def predict(self, temp_id: str, ts_ms: int) -> str:
        traj = self.trajectory(temp_id, ts_ms)
        m = self.locate(temp_id, ts_ms)
        return promptgen.render_state_prediction(traj, self.lane_forecasts(m.intersection_id, ts_ms))

    def plan(
        self,
        temp_id: str,
        ts_ms: int,
        end_intersection: Optional[str] = None,
        cruise_mps: Optional[float] = None,
    ) -> AdvisoryPlan:
        """Route from the vehicle's current lane. Without ``cruise_mps`` the
        vehicle's own speed at ``ts_ms`` is used, falling back to the default
        cruise speed when it is stopped."""
        s = self.scenario
        track = s.track(temp_id)
        pos = track.at(ts_ms).pos
        m = match_lane(pos, s.maps)
        if cruise_mps is None:
            cruise_mps = derive_speed_mps(track, ts_ms)
            if cruise_mps <= 0:
                cruise_mps = DEFAULT_CRUISE_MPS
        end = end_intersection or s.layout.order[-1]
        return plan_route(
            self.graph, s.timeline, self.cycles, (m.intersection_id, m.lane_id), end, ts_ms, cruise_mps, start_pos=pos
        )

    def advise(self, temp_id: str, ts_ms: int, end_intersection: Optional[str] = None,
               cruise_mps: Optional[float] = None) -> str:
        return promptgen.render_navigation_advisory(self.plan(temp_id, ts_ms, end_intersection, cruise_mps))
