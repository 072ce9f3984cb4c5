from __future__ import annotations

import json
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xcorridor import codec, geo
from v2xcorridor.codec import (
    BsmRecord,
    InvariantViolation,
    MalformedFrame,
    OversizeFrame,
    PhaseStateEntry,
    SchemaViolation,
    SignalPhaseState,
    SpatRecord,
    TruncatedFrame,
)
from v2xcorridor.geo import GeoPoint

from strategies import messages

BSM_LINE = ('{"type":"BSM","temp_id":"0A1B2C3D","ts_ms":1688467730950,"lat":43.0699,"lon":-89.4008,'
            '"elev_m":260.0,"speed_mps":0.4068,"heading_deg":180.0,"width_m":1.8,"length_m":4.5}')
SPAT_LINE = ('{"type":"SPAT","intersection_id":"regent","ts_ms":1688467730950,'
             '"states":[{"signal_group":2,"phase":"stop-And-Remain","remaining_s":18.77}]}')
MAP_LINE = json.dumps({
    "type": "MAP", "intersection_id": "regent", "name": "Park St @ Regent",
    "ref": {"lat": 43.0705, "lon": -89.4005},
    "lanes": [{
        "lane_id": 11, "movement": "SB-T", "signal_group": 2,
        "polygon": [[43.0704, -89.4006], [43.0704, -89.4004], [43.0706, -89.4004], [43.0706, -89.4006]],
        "connects_to": [{"intersection_id": "regent", "lane_id": 21}],
    }],
})

BSM_OBJ = json.loads(BSM_LINE)
CCW = json.loads(MAP_LINE)["lanes"][0]["polygon"]
CW = CCW[::-1]


def _signed_area(polygon) -> float:
    # shoelace over (lon, lat): positive for counter-clockwise
    pts = [(p.lon_deg, p.lat_deg) for p in polygon]
    return sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]))


def test_parse_bsm_example():
    m = codec.parse_line(BSM_LINE)
    assert isinstance(m, BsmRecord)
    # 0.91 mph * 0.44704 m/s per mph
    assert m.speed_mps == pytest.approx(0.91 * 0.44704, abs=5e-5)
    assert m.speed_mps == 0.4068
    assert m.temp_id == "0A1B2C3D"
    assert m.ts_ms == 1688467730950
    assert m.pos == GeoPoint(43.0699, -89.4008, 260.0)


def test_parse_spat_example():
    m = codec.parse_line(SPAT_LINE)
    assert isinstance(m, SpatRecord)
    assert len(m.states) == 1
    s = m.states[0]
    assert (s.signal_group, s.phase, s.remaining_s) == (2, SignalPhaseState.STOP_AND_REMAIN, 18.77)


def test_zero_timestamp_rejected():
    with pytest.raises(InvariantViolation) as e:
        codec.parse_line(json.dumps({**BSM_OBJ, "ts_ms": 0}))
    assert e.value.field == "ts_ms"


def test_latitude_out_of_range():
    with pytest.raises(InvariantViolation) as e:
        codec.parse_line(json.dumps({**BSM_OBJ, "lat": 95}))
    assert e.value.field == "lat"


@pytest.mark.parametrize("key", ["temp_id", "ts_ms", "lat", "speed_mps", "heading_deg", "width_m", "length_m"])
def test_missing_field_named(key):
    obj = dict(BSM_OBJ)
    del obj[key]
    with pytest.raises(SchemaViolation) as e:
        codec.parse_line(json.dumps(obj))
    assert e.value.field == key


def test_ill_typed_field_named():
    with pytest.raises(SchemaViolation) as e:
        codec.parse_line(json.dumps({**BSM_OBJ, "speed_mps": "fast"}))
    assert e.value.field == "speed_mps"
    with pytest.raises(SchemaViolation) as e:
        codec.parse_line(json.dumps({**BSM_OBJ, "ts_ms": 1.5}))
    assert e.value.field == "ts_ms"


@pytest.mark.parametrize("field_name,value", [
    ("speed_mps", -0.1), ("heading_deg", 360.0), ("heading_deg", -1.0), ("width_m", 0.0), ("temp_id", "XYZ"),
])
def test_invariants(field_name, value):
    with pytest.raises(InvariantViolation) as e:
        codec.parse_line(json.dumps({**BSM_OBJ, field_name: value}))
    assert e.value.field == field_name


def test_unknown_fields_ignored():
    m = codec.parse_line(json.dumps({**BSM_OBJ, "brake_status": "on"}))
    assert m == codec.parse_line(BSM_LINE)


@pytest.mark.parametrize("line", ["", "{", "[1,2]", '"BSM"', "\xff", b"\xff\xfe", '{"type":"BSM","lat":NaN}'])
def test_malformed(line):
    with pytest.raises(MalformedFrame):
        codec.parse_line(line)


def test_unknown_type():
    with pytest.raises(SchemaViolation) as e:
        codec.parse_line('{"type":"SRM"}')
    assert e.value.field == "type"


def test_duplicate_signal_group():
    obj = json.loads(SPAT_LINE)
    obj["states"] *= 2
    with pytest.raises(InvariantViolation):
        codec.parse_line(json.dumps(obj))


def test_negative_remaining():
    obj = json.loads(SPAT_LINE)
    obj["states"][0]["remaining_s"] = -0.5
    with pytest.raises(InvariantViolation):
        codec.parse_line(json.dumps(obj))


def test_serialize_canonical_key_order():
    out = codec.serialize(codec.parse_line(BSM_LINE))
    keys = list(json.loads(out))
    assert keys[0] == "type"
    assert keys[1:] == sorted(keys[1:])
    assert "\n" not in out


@pytest.mark.parametrize("line", [BSM_LINE, SPAT_LINE, MAP_LINE])
def test_serialize_is_canonical_form_of_fixture(line):
    obj = json.loads(line)
    out = codec.serialize(codec.parse_line(line))
    assert json.loads(out) == obj
    assert codec.serialize(codec.parse_line(out)) == out


def test_heading_zero_renders_as_float():
    out = codec.serialize(codec.parse_line(json.dumps({**BSM_OBJ, "heading_deg": 0})))
    assert '"heading_deg":0.0' in out
    out = codec.serialize(codec.parse_line(json.dumps({**BSM_OBJ, "heading_deg": -0.0})))
    assert '"heading_deg":0.0' in out
    assert "-0.0" not in out


def test_spat_states_sorted():
    rec = SpatRecord("regent", 1, tuple(
        PhaseStateEntry(g, SignalPhaseState.DARK, 1.0) for g in (6, 2, 4)
    ))
    out = json.loads(codec.serialize(rec))
    assert [s["signal_group"] for s in out["states"]] == [2, 4, 6]


@pytest.mark.parametrize("state", list(SignalPhaseState))
def test_enum_spelling_round_trip(state):
    rec = SpatRecord("x", 5, (PhaseStateEntry(1, state, 0.0),))
    out = codec.serialize(rec)
    assert f'"phase":"{state.value}"' in out
    assert codec.parse_line(out).states[0].phase is state


def test_enum_spellings():
    assert [s.value for s in SignalPhaseState] == [
        "unavailable", "dark", "stop-Then-Proceed", "stop-And-Remain", "pre-Movement",
        "permissive-Movement-Allowed", "protected-Movement-Allowed", "permissive-clearance",
        "protected-clearance", "caution-Conflicting-Traffic",
    ]


def test_movement_render():
    m = codec.parse_line(MAP_LINE)
    assert str(m.lanes[0].movement) == "SB-T"
    with pytest.raises(ValueError):
        codec.Movement.parse("SB")
    with pytest.raises(ValueError):
        codec.Movement("NE", "T")


def test_map_ring_normalized_ccw():
    obj = json.loads(MAP_LINE)
    obj["lanes"][0]["polygon"] = CW
    cw = codec.parse_line(json.dumps(obj))
    assert _signed_area(cw.lanes[0].polygon) > 0
    ccw = codec.parse_line(MAP_LINE)
    assert _signed_area(ccw.lanes[0].polygon) > 0
    assert set(ccw.lanes[0].polygon) == set(cw.lanes[0].polygon)


def test_map_closed_ring_accepted():
    obj = json.loads(MAP_LINE)
    obj["lanes"][0]["polygon"] = CCW + [CCW[0]]
    m = codec.parse_line(json.dumps(obj))
    assert len(m.lanes[0].polygon) == 4


def test_map_self_intersecting_rejected():
    obj = json.loads(MAP_LINE)
    a, b, c, d = CCW
    obj["lanes"][0]["polygon"] = [a, c, b, d]
    with pytest.raises(InvariantViolation):
        codec.parse_line(json.dumps(obj))


def test_map_duplicate_lane_rejected():
    obj = json.loads(MAP_LINE)
    obj["lanes"] *= 2
    with pytest.raises(InvariantViolation):
        codec.parse_line(json.dumps(obj))


def test_map_ref_point_outside_hull_warns(caplog):
    obj = json.loads(MAP_LINE)
    obj["ref"] = {"lat": 43.08, "lon": -89.40}
    with caplog.at_level("WARNING"):
        m = codec.parse_line(json.dumps(obj))
    assert not m.check_ref_point()
    assert "convex hull" in caplog.text
    assert codec.parse_line(MAP_LINE).check_ref_point()


@pytest.mark.parametrize("line", [BSM_LINE, SPAT_LINE, MAP_LINE])
def test_frame_round_trip(line):
    m = codec.parse_line(line)
    frame = codec.frame_encode(m)
    payload = codec.serialize(m).encode()
    assert frame[:4] == struct.pack(">I", len(payload))
    assert frame[4:] == payload
    assert codec.frame_decode(frame) == m


def test_frame_empty_is_truncated():
    with pytest.raises(TruncatedFrame):
        codec.frame_decode(b"")


def test_frame_short_payload_is_truncated():
    frame = codec.frame_encode(codec.parse_line(BSM_LINE))
    with pytest.raises(TruncatedFrame):
        codec.frame_decode(frame[:-1])


def test_frame_oversize():
    with pytest.raises(OversizeFrame):
        codec.frame_decode(struct.pack(">I", 2_000_000) + b"x" * 16)


def test_frame_trailing_bytes():
    frame = codec.frame_encode(codec.parse_line(BSM_LINE))
    with pytest.raises(MalformedFrame):
        codec.frame_decode(frame + b"\0")


def test_frame_split_stream():
    a, b = codec.parse_line(BSM_LINE), codec.parse_line(SPAT_LINE)
    buf = codec.frame_encode(a) + codec.frame_encode(b)
    p1, rest = codec.frame_split(buf)
    p2, rest = codec.frame_split(rest)
    assert (codec.parse_line(p1), codec.parse_line(p2), rest) == (a, b, b"")


@settings(max_examples=300, deadline=None)
@given(messages)
def test_round_trip_property(m):
    assert codec.parse_line(codec.serialize(m)) == m
    assert codec.frame_decode(codec.frame_encode(m)) == m


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=300))
def test_parse_line_rejects_bytes_with_typed_errors(data):
    try:
        codec.parse_line(data)
    except (MalformedFrame, SchemaViolation, InvariantViolation):
        pass


@settings(max_examples=300, deadline=None)
@given(st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats() | st.text(max_size=8),
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=8), kids, max_size=4),
    max_leaves=20,
), st.sampled_from(["BSM", "SPAT", "MAP"]))
def test_parse_line_rejects_json_with_typed_errors(body, kind):
    obj = {**body, "type": kind} if isinstance(body, dict) else body
    try:
        codec.parse_line(json.dumps(obj))
    except (MalformedFrame, SchemaViolation, InvariantViolation):
        pass


def test_geo_point_invariants():
    with pytest.raises(ValueError):
        GeoPoint(95.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 181.0)
    assert geo.haversine_m(GeoPoint(0, 0), GeoPoint(0, 0)) == 0.0
