from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xcorridor import advisory
from v2xcorridor.advisory import (
    DanglingConnection,
    NonPositiveInput,
    NoPath,
    build_lane_graph,
    estimate_travel_s,
    plan_route,
)
from v2xcorridor.codec import IntersectionMap, LaneRef, SignalPhaseState
from v2xcorridor.prediction import infer_plan
from v2xcorridor.timefmt import format_ts_s

import golden_fixtures as pf

S = SignalPhaseState
PUBLISHED_PATH = [("dayton", 2), ("dayton", 15), ("regent", 9), ("regent", 19), ("braxton", 3), ("braxton", 10),
              ("vilaswashington", 6), ("vilaswashington", 15), ("erin", 7), ("erin", 16), ("fishhatchery", 8)]


@pytest.fixture(scope="module")
def corridor():
    return pf.advisory_corridor()


def test_graph_has_published_path(corridor):
    maps, layout, _ = corridor
    g = build_lane_graph(maps, layout)
    for a, b in zip(PUBLISHED_PATH, PUBLISHED_PATH[1:]):
        assert g.has_edge(a, b), (a, b)
    assert len(g.segment) == 5
    assert sum(len(v) for v in g.segment.values()) == 5
    assert all(a in g.nodes and b in g.nodes for a, b in g.edges())


def test_synthetic_graph_segment_count(short_scenario):
    g = build_lane_graph(short_scenario.maps, short_scenario.layout)
    assert sum(len(v) for v in g.segment.values()) == 5
    order = short_scenario.layout.order
    for a, targets in g.segment.items():
        for b in targets:
            assert order.index(b[0]) == order.index(a[0]) + 1


def test_dangling_connection(corridor):
    maps, layout, _ = corridor
    m0 = maps[0]
    bad_lane = dataclasses.replace(m0.lanes[0], connects_to=(LaneRef("dayton", 99),))
    bad = [IntersectionMap(m0.intersection_id, m0.name, m0.ref_point, (bad_lane,) + m0.lanes[1:])] + maps[1:]
    with pytest.raises(DanglingConnection) as e:
        build_lane_graph(bad, layout)
    assert e.value.target == ("dayton", 99)
    assert e.value.source == ("dayton", bad_lane.lane_id)


def test_travel_time_published_segment():
    # 0.24 mi is 386 m; 386 / 9.65 = 40.0
    assert estimate_travel_s(386.0, 9.65, (S.PROTECTED_MOVEMENT_ALLOWED, 5.0)) == pytest.approx(40.0, abs=0.5)
    assert estimate_travel_s(386.0, 9.65) == pytest.approx(386.0 / 9.65)


def test_travel_time_adds_red():
    base = 100.0 / 10.0
    assert estimate_travel_s(100.0, 10.0, (S.STOP_AND_REMAIN, 12.0)) == base + 12.0
    assert estimate_travel_s(100.0, 10.0, (S.STOP_THEN_PROCEED, 12.0)) == base + 12.0
    assert estimate_travel_s(100.0, 10.0, (S.PROTECTED_CLEARANCE, 12.0)) == base


@pytest.mark.parametrize("seg,cruise", [(0.0, 10.0), (-1.0, 10.0), (10.0, 0.0)])
def test_travel_time_rejects_non_positive(seg, cruise):
    with pytest.raises(NonPositiveInput):
        estimate_travel_s(seg, cruise)


def test_published_plan(corridor):
    maps, layout, timeline = corridor
    g = build_lane_graph(maps, layout)
    plan = plan_route(g, timeline, {}, ("dayton", 2), "fishhatchery", pf.ADVISORY_TS, pf.ADVISORY_CRUISE_MPS)
    assert [s.arrival_ts_ms for s in plan.steps] == list(pf.ADVISORY_ARRIVALS)
    assert [round(s.est_travel_s) for s in plan.steps] == [40, 50, 10, 25, 35]
    assert format_ts_s(plan.final.ts_ms) == "2023-07-04 10:50:51"
    assert plan.lane_path() == PUBLISHED_PATH
    first = plan.steps[0]
    assert (first.signal_group, first.movement, first.phase, first.remaining_s) == (4, "WB-T", S.PROTECTED_MOVEMENT_ALLOWED, 1.0)


def test_start_equals_end(corridor):
    maps, layout, timeline = corridor
    g = build_lane_graph(maps, layout)
    plan = plan_route(g, timeline, {}, ("regent", 9), "regent", pf.ADVISORY_TS)
    assert plan.steps == ()
    assert (plan.final.intersection_id, plan.final.lane_id, plan.final.ts_ms) == ("regent", 9, pf.ADVISORY_TS)


def test_missing_segment_is_no_path(corridor):
    maps, layout, timeline = corridor
    g = build_lane_graph(maps, layout)
    del g.segment[("braxton", 10)]
    with pytest.raises(NoPath, match="braxton"):
        plan_route(g, timeline, {}, ("dayton", 2), "fishhatchery", pf.ADVISORY_TS)


def test_upstream_end_is_no_path(corridor):
    maps, layout, timeline = corridor
    g = build_lane_graph(maps, layout)
    with pytest.raises(NoPath):
        plan_route(g, timeline, {}, ("erin", 7), "dayton", pf.ADVISORY_TS)


def test_red_at_arrival_delays_hop(corridor):
    maps, layout, _ = corridor
    from v2xcorridor.codec import PhaseStateEntry, SpatRecord
    from v2xcorridor.scenario import SignalTimeline
    spats = [SpatRecord(iid, pf.ADVISORY_TS, (PhaseStateEntry(4 if i == 0 else 2,
             S.STOP_AND_REMAIN if iid == "regent" else S.PROTECTED_MOVEMENT_ALLOWED, 600.0 if iid != "regent" else 45.0),))
             for i, iid in enumerate(pf.ADVISORY_IDS)]
    g = build_lane_graph(maps, layout)
    plan = plan_route(g, SignalTimeline.from_spat(spats), {}, ("dayton", 2), "regent", pf.ADVISORY_TS, 10.0)
    # 40 s of driving, then the 5 s of red still showing at arrival
    assert plan.steps[0].est_travel_s == pytest.approx(45.0)


def test_fork_prefers_through_then_lowest_id():
    from v2xcorridor.codec import LaneGeometry, Movement
    maps, layout, timeline = pf.advisory_corridor()
    m0 = maps[0]
    ingress = m0.lane(2)
    inner = m0.lane(15)
    # add a left turn (lane 3) and a second through (lane 17) that both reach regent
    left = LaneGeometry(3, inner.polygon, Movement("WB", "L"), None, inner.connects_to)
    through = LaneGeometry(17, inner.polygon, Movement("WB", "T"), None, inner.connects_to)
    conns = (LaneRef("dayton", 3), LaneRef("dayton", 17), LaneRef("dayton", 15))
    new_ingress = dataclasses.replace(ingress, connects_to=conns)
    maps = [IntersectionMap(m0.intersection_id, m0.name, m0.ref_point, (new_ingress, inner, left, through))] + maps[1:]
    g = build_lane_graph(maps, layout)
    plan = plan_route(g, timeline, {}, ("dayton", 2), "regent", pf.ADVISORY_TS, 10.0)
    assert plan.steps[0].internal_lane == 15


def test_synthetic_plan_properties(short_scenario):
    s = short_scenario
    g = build_lane_graph(s.maps, s.layout)
    cycles = infer_plan(s.timeline)
    t0 = s.tracks[0].samples[0].ts_ms
    plan = plan_route(g, s.timeline, cycles, ("dayton", 11), "fishhatchery", t0)
    assert [st.intersection_id for st in plan.steps] == s.layout.order[:-1]
    for a, b in zip(plan.steps, plan.steps[1:]):
        assert a.arrival_ts_ms == b.ts_ms
    for st_ in plan.steps:
        assert st_.arrival_ts_ms == st_.ts_ms + round(st_.est_travel_s * 1000)
        assert st_.arrival_ts_ms > st_.ts_ms
    path = plan.lane_path()
    assert all(g.has_edge(a, b) for a, b in zip(path, path[1:]))
    again = plan_route(g, s.timeline, cycles, ("dayton", 11), "fishhatchery", t0)
    assert again.to_json() == plan.to_json()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1500), st.floats(4.0, 25.0), st.integers(0, 4))
def test_plan_invariants_property(short_scenario, offset_s, cruise, start_k):
    s = short_scenario
    g = _graph_cache(s)
    cycles = _cycles_cache(s)
    start = (s.layout.order[start_k], 11)
    t = s.tracks[0].samples[0].ts_ms + offset_s * 100
    plan = plan_route(g, s.timeline, cycles, start, s.layout.order[-1], t, cruise)
    arrivals = [st_.arrival_ts_ms for st_ in plan.steps]
    assert arrivals == sorted(set(arrivals))
    for a, b in zip(plan.steps, plan.steps[1:]):
        assert a.arrival_ts_ms == b.ts_ms
    path = plan.lane_path()
    assert all(g.has_edge(a, b) for a, b in zip(path, path[1:]))


_cache: dict = {}


def _graph_cache(s):
    return _cache.setdefault(("g", id(s)), build_lane_graph(s.maps, s.layout))


def _cycles_cache(s):
    return _cache.setdefault(("c", id(s)), infer_plan(s.timeline))


def test_default_cruise():
    assert advisory.DEFAULT_CRUISE_MPS == 11.2
