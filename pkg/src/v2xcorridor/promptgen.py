"""Deterministic prompt and answer rendering.

Templates live in ``templates/<version>/*.txt`` as ``[section]`` blocks with
``{NAME}`` placeholders. Every renderer has a matching ``*_slots`` function
returning the placeholder values it fills, which is what slot extraction is
checked against.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .advisory import AdvisoryPlan, AdvisoryStep
from .codec import Movement, SignalPhaseState
from .geo import GeoPoint
from .prediction import PhaseForecast, TrajectoryForecast
from .scenario import CorridorLayout, EncodedScenario, TripSummary
from .timefmt import format_clock_cs, format_ts_cs, format_ts_s

TEMPLATE_VERSION = "v1"
TASK_KINDS = ("explanation", "description", "prediction", "advisory")
NO_VEHICLES = "no connected vehicles observed"

_PLACEHOLDER = re.compile(r"\{[A-Z][A-Z0-9_]*\}")
_SECTION = re.compile(r"^\[([a-z_]+)\]$")
_NUMBER_WORDS = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty"
).split()


class PromptError(ValueError):
    pass


class EmptyPlan(PromptError):
    pass


class ResidualPlaceholder(PromptError):
    pass


@functools.lru_cache(maxsize=None)
def load_templates(name: str, version: str = TEMPLATE_VERSION) -> dict[str, tuple[str, ...]]:
    """Sections of one template file; a section name may repeat (variants)."""
    text = resources.files(__package__).joinpath("templates", version, f"{name}.txt").read_text("utf-8")
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    buf: list[str] = []

    def flush() -> None:
        if current is not None:
            sections.setdefault(current, []).append("\n".join(buf).strip("\n"))

    for line in text.splitlines():
        m = _SECTION.match(line.strip())
        if m:
            flush()
            current, buf = m.group(1), []
        else:
            buf.append(line)
    flush()
    return {k: tuple(v) for k, v in sections.items()}


def _section(name: str, section: str, variant: int = 0) -> str:
    variants = load_templates(name)[section]
    return variants[variant % len(variants)]


def fill(template: str, values: dict[str, object]) -> str:
    out = template.format_map({k: str(v) for k, v in values.items()})
    left = _PLACEHOLDER.findall(out)
    if left:
        raise ResidualPlaceholder(f"unfilled placeholders: {left}")
    return out


# ------------------------------------------------------------- formatting

def count_text(n: int) -> str:
    return _NUMBER_WORDS[n] if 0 <= n < len(_NUMBER_WORDS) else str(n)


def join_names(names: Sequence[str]) -> str:
    names = list(names)
    if len(names) <= 1:
        return "".join(names)
    if len(names) == 2:
        return f"{names[0]} and {names[1]}"
    return ", ".join(names[:-1]) + f", and {names[-1]}"


def fmt2(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def fmt_point(p: GeoPoint) -> str:
    return f"({p.lat_deg:.6f}, {p.lon_deg:.6f})"


def whole(x: float) -> int:
    return int(x + 0.5) if x >= 0 else -int(-x + 0.5)


def seconds_text(x: float) -> str:
    n = whole(x)
    return f"{n} second" if n == 1 else f"{n} seconds"


def phase_text(phase: Optional[SignalPhaseState], colloquial: bool) -> str:
    if phase is None:
        return "unknown"
    return phase.color if colloquial else phase.value


# ------------------------------------------------------------ role/context

def _layout_block(s: EncodedScenario) -> str:
    return "\n".join(
        f"- {stop.name} ({stop.intersection_id}): reference {fmt_point(stop.ref_point)}"
        for stop in s.layout.intersections
    )


def _lane_block(s: EncodedScenario) -> str:
    lines = []
    for m in s.maps:
        for lane in m.lanes:
            sg = "none" if lane.signal_group is None else str(lane.signal_group)
            conn = ", ".join(f"{r.intersection_id}/{r.lane_id}" for r in lane.connects_to) or "none"
            poly = ", ".join(fmt_point(p) for p in lane.polygon)
            lines.append(
                f"- {m.name} lane {lane.lane_id}: movement {lane.movement}, signal group {sg}, "
                f"connects to {conn}, polygon [{poly}]"
            )
    return "\n".join(lines) or "no lanes"


def _signal_block(s: EncodedScenario) -> str:
    names = {m.intersection_id: m.name for m in s.maps}
    lines = []
    for iid, sg in s.timeline.keys():
        last = None
        for p in s.timeline.samples(iid, sg):
            if p.phase != last:
                lines.append(
                    f"- {format_ts_cs(p.ts_ms)} {names.get(iid, iid)} signal group {sg}: "
                    f"{p.phase.value}, {fmt2(p.remaining_s)} s remaining"
                )
                last = p.phase
    return "\n".join(lines) or "no signal data"


def _motion_block(s: EncodedScenario) -> str:
    lines = []
    for t in s.tracks:
        for b in t.samples:
            elev = "n/a" if b.pos.elev_m is None else f"{b.pos.elev_m:.1f} m"
            lines.append(
                f"- {format_ts_cs(b.ts_ms)} vehicle {b.temp_id}: lat {b.pos.lat_deg:.6f}, "
                f"lon {b.pos.lon_deg:.6f}, elevation {elev}, speed {fmt2(b.speed_mps)} m/s, "
                f"heading {b.heading_deg:.1f} deg, width {b.width_m:.2f} m, length {b.length_m:.2f} m"
            )
    return "\n".join(lines) or NO_VEHICLES


def render_role_context(scenario: EncodedScenario) -> tuple[str, str]:
    role = _section("role", "role")
    context = fill(
        _section("role", "context"),
        {
            "CORRIDOR_LAYOUT": _layout_block(scenario),
            "LANE_GEOMETRY": _lane_block(scenario),
            "SIGNAL_TIMING": _signal_block(scenario),
            "MOTION_STATES": _motion_block(scenario),
        },
    )
    return role, context


def task_prompt(task_kind: str) -> str:
    if task_kind not in TASK_KINDS:
        raise PromptError(f"unknown task kind {task_kind!r}")
    return _section(task_kind, "prompt")


@dataclass(frozen=True)
class PromptBundle:
    role_text: str
    context_text: str
    task_prompt: str
    filled_template: str
    task_kind: str

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise PromptError(f"unknown task kind {self.task_kind!r}")
        if _PLACEHOLDER.search(self.filled_template):
            raise ResidualPlaceholder("filled template still has placeholders")


def make_bundle(scenario: EncodedScenario, task_kind: str, filled_template: str) -> PromptBundle:
    role, context = render_role_context(scenario)
    return PromptBundle(role, context, task_prompt(task_kind), filled_template, task_kind)


# --------------------------------------------------------- scenario explanation

def explanation_slots(layout: CorridorLayout, trip: Optional[TripSummary] = None) -> dict[str, str]:
    names = [s.name for s in layout.intersections]
    slots = {
        "NUMBER": count_text(len(names)),
        "DIRECTION": layout.direction_label,
        "INTERSECTION_NAMES": join_names(names),
        "CORRIDOR_LENGTH": fmt2(layout.total_mi),
    }
    for k, (a, b, d) in enumerate(zip(names, names[1:], layout.segment_mi), 1):
        slots[f"FROM_NAME#{k}"] = a
        slots[f"TO_NAME#{k}"] = b
        slots[f"DISTANCE#{k}"] = fmt2(d)
    if trip is not None:
        slots.update(
            START_NAME=trip.start_name,
            START_TIMESTAMP=format_ts_cs(trip.start_ts),
            VISITED_NAMES=join_names(trip.visited_names),
            END_NAME=trip.end_name,
            END_TIMESTAMP=format_ts_cs(trip.end_ts),
            TRIP_DISTANCE=fmt2(trip.distance_mi),
            DURATION=str(whole(trip.duration_s)),
        )
    return slots


def render_scenario_explanation(layout: CorridorLayout, trip: Optional[TripSummary] = None) -> str:
    slots = explanation_slots(layout, trip)
    n = len(layout.segment_mi)

    def seg(k: int) -> dict[str, str]:
        return {key: slots[f"{key}#{k}"] for key in ("FROM_NAME", "TO_NAME", "DISTANCE")}

    if n == 1:
        distances = fill(_section("explanation", "distances_one"), seg(1))
    else:
        parts = [fill(_section("explanation", "segment"), seg(k)) for k in range(1, n + 1)]
        distances = fill(_section("explanation", "distances_many"), {"SEGMENTS": join_names(parts)})
    text = fill(_section("explanation", "layout"), {**slots, "DISTANCES": distances})
    if trip is not None:
        text += "\n" + fill(_section("explanation", "trip"), slots)
    return text


# ------------------------------------------------------------ data description

def description_slots(
    lane_id: int,
    intersection_name: str,
    movement: Movement,
    phase: SignalPhaseState,
    remaining_s: float,
    speed_mph: float,
    ts_ms: int,
) -> dict[str, str]:
    return {
        "TIMESTAMP": format_ts_cs(ts_ms),
        "LANE_ID": str(lane_id),
        "INTERSECTION_NAME": intersection_name,
        "SPEED": fmt2(speed_mph),
        "MOVEMENT": str(movement),
        "MOVEMENT_NAME": movement.long_name,
        "PHASE_STATE": phase.value,
        "TIMING": fmt2(remaining_s),
    }


def render_data_description(
    lane_id: int,
    intersection_name: str,
    movement: Movement,
    phase: SignalPhaseState,
    remaining_s: float,
    speed_mph: float,
    ts_ms: int,
) -> str:
    slots = description_slots(lane_id, intersection_name, movement, phase, remaining_s, speed_mph, ts_ms)
    return fill(_section("description", "answer"), slots)


# ------------------------------------------------------------ state prediction

@dataclass(frozen=True)
class LaneForecast:
    """A phase forecast with the lane it is reported for."""

    intersection_name: str
    lane_id: int
    forecast: PhaseForecast


def prediction_slots(traj: TrajectoryForecast, forecasts: Sequence[LaneForecast] = ()) -> dict[str, str]:
    slots = {
        "POSITION": fmt_point(traj.origin),
        "TRAJECTORY": "[" + ", ".join(fmt_point(p) for p in traj.points) + "]",
    }
    g = 0
    last = None
    for k, lf in enumerate(forecasts, 1):
        key = (lf.intersection_name, lf.forecast.query_ts_ms)
        if key != last:
            g += 1
            slots[f"TIMESTAMP#{g}"] = format_ts_cs(lf.forecast.query_ts_ms)
            slots[f"INTERSECTION_NAME#{g}"] = lf.intersection_name
            last = key
        f = lf.forecast
        slots[f"LANE_ID#{k}"] = str(lf.lane_id)
        slots[f"SIGNAL_PHASE#{k}"] = f.current_phase.value
        slots[f"REMAINING_TIME#{k}"] = fmt2(f.remaining_s)
        slots[f"NEXT_SIGNAL_PHASE#{k}"] = f.next_phase.value
        slots[f"NEXT_TIMESTAMP#{k}"] = format_clock_cs(f.next_ts_ms)
    return slots


def render_state_prediction(traj: TrajectoryForecast, forecasts: Sequence[LaneForecast] = ()) -> str:
    """Trajectory paragraph, then one block per (intersection, timestamp) run of
    consecutive forecasts."""
    slots = prediction_slots(traj, forecasts)
    lines = [fill(_section("prediction", "trajectory"), slots)]
    g = 0
    last = None
    for k, lf in enumerate(forecasts, 1):
        key = (lf.intersection_name, lf.forecast.query_ts_ms)
        if key != last:
            g += 1
            lines.append(
                fill(
                    _section("prediction", "group"),
                    {"TIMESTAMP": slots[f"TIMESTAMP#{g}"], "INTERSECTION_NAME": slots[f"INTERSECTION_NAME#{g}"]},
                )
            )
            last = key
        lines.append(
            fill(
                _section("prediction", "lane"),
                {
                    name: slots[f"{name}#{k}"]
                    for name in ("LANE_ID", "SIGNAL_PHASE", "REMAINING_TIME", "NEXT_SIGNAL_PHASE", "NEXT_TIMESTAMP")
                },
            )
        )
    return "\n".join(lines)


# ---------------------------------------------------------- navigation advisory

def _hop_slots(step: AdvisoryStep) -> dict[str, str]:
    return {
        "LANE_ID": str(step.ingress_lane),
        "INTERSECTION_NAME": step.intersection_name,
        "INTERNAL_LANE_ID": str(step.internal_lane),
        "NEXT_LANE_ID": str(step.next_lane),
        "NEXT_INTERSECTION_NAME": step.next_intersection_name,
        "ESTIMATED_TRAVEL_TIME": seconds_text(step.est_travel_s),
        "ARRIVAL_TIMESTAMP": format_ts_s(step.arrival_ts_ms),
    }


def advisory_slots(plan: AdvisoryPlan, colloquial: bool = True) -> dict[str, str]:
    if not plan.steps:
        raise EmptyPlan("plan has no hops")
    first = plan.steps[0]
    slots = {
        "TIMESTAMP": format_ts_s(first.ts_ms),
        "LANE_ID": str(first.ingress_lane),
        "INTERSECTION_NAME": first.intersection_name,
        "SIGNAL_GROUP_ID": "none" if first.signal_group is None else str(first.signal_group),
        "MOVEMENT": first.movement,
        "SIGNAL_PHASE": phase_text(first.phase, colloquial),
        "REMAINING_TIME": "unknown" if first.remaining_s is None else seconds_text(first.remaining_s),
    }
    for k, step in enumerate(plan.steps, 1):
        hop = _hop_slots(step)
        for name in ("INTERNAL_LANE_ID", "NEXT_LANE_ID", "NEXT_INTERSECTION_NAME", "ESTIMATED_TRAVEL_TIME", "ARRIVAL_TIMESTAMP"):
            slots[f"{name}#{k}"] = hop[name]
    return slots


def render_navigation_advisory(plan: AdvisoryPlan, colloquial: bool = True) -> str:
    """One paragraph per hop. ``colloquial`` renders the departure phase as a
    light colour (green/yellow/red) instead of its state name."""
    slots = advisory_slots(plan, colloquial)
    n = len(plan.steps)
    paras = []
    for k, step in enumerate(plan.steps):
        hop = _hop_slots(step)
        if k == 0:
            paras.append(fill(_section("advisory", "first"), {**slots, **hop}))
        elif k == n - 1:
            paras.append(fill(_section("advisory", "final"), hop))
        else:
            paras.append(fill(_section("advisory", "middle", k - 1), hop))
    return "\n".join(paras)
