"""BSM / SPaT / MAP message subset: typed records, JSONL lines, binary frames.

One message per JSONL line with a ``type`` discriminator. Canonical output
puts ``type`` first and every other key in alphabetical order, floats in
shortest round-trip form. A frame is a 4-byte big-endian length followed by
the line's bytes (no trailing newline).
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
import struct
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from . import geo
from .geo import GeoPoint

logger = logging.getLogger(__name__)

MAX_FRAME_BYTES = 1 << 20
_HEADER = struct.Struct(">I")
_TEMP_ID = re.compile(r"[0-9A-Fa-f]{8}")


class CodecError(ValueError):
    """Base class of every error the codec raises."""


class MalformedFrame(CodecError):
    pass


class SchemaViolation(CodecError):
    def __init__(self, field_name: str, detail: str = "") -> None:
        self.field = field_name
        super().__init__(f"{field_name}: {detail}" if detail else field_name)


class InvariantViolation(CodecError):
    def __init__(self, field_name: str, detail: str = "") -> None:
        self.field = field_name
        super().__init__(f"{field_name}: {detail}" if detail else field_name)


class TruncatedFrame(CodecError):
    pass


class OversizeFrame(CodecError):
    pass


class SignalPhaseState(enum.Enum):
    UNAVAILABLE = "unavailable"
    DARK = "dark"
    STOP_THEN_PROCEED = "stop-Then-Proceed"
    STOP_AND_REMAIN = "stop-And-Remain"
    PRE_MOVEMENT = "pre-Movement"
    PERMISSIVE_MOVEMENT_ALLOWED = "permissive-Movement-Allowed"
    PROTECTED_MOVEMENT_ALLOWED = "protected-Movement-Allowed"
    PERMISSIVE_CLEARANCE = "permissive-clearance"
    PROTECTED_CLEARANCE = "protected-clearance"
    CAUTION_CONFLICTING_TRAFFIC = "caution-Conflicting-Traffic"

    def __str__(self) -> str:
        return self.value

    @property
    def is_stop(self) -> bool:
        return self in (SignalPhaseState.STOP_AND_REMAIN, SignalPhaseState.STOP_THEN_PROCEED)

    @property
    def color(self) -> str:
        """Colloquial indication name used in driver-facing text."""
        if self in (
            SignalPhaseState.PERMISSIVE_MOVEMENT_ALLOWED,
            SignalPhaseState.PROTECTED_MOVEMENT_ALLOWED,
            SignalPhaseState.PRE_MOVEMENT,
        ):
            return "green"
        if self in (
            SignalPhaseState.PERMISSIVE_CLEARANCE,
            SignalPhaseState.PROTECTED_CLEARANCE,
            SignalPhaseState.CAUTION_CONFLICTING_TRAFFIC,
        ):
            return "yellow"
        if self.is_stop:
            return "red"
        return self.value


APPROACHES = {"NB": "Northbound", "SB": "Southbound", "EB": "Eastbound", "WB": "Westbound"}
MANEUVERS = {"T": "Through", "L": "Left", "R": "Right"}


@dataclass(frozen=True)
class Movement:
    approach: str
    maneuver: str

    def __post_init__(self) -> None:
        if self.approach not in APPROACHES or self.maneuver not in MANEUVERS:
            raise ValueError(f"bad movement {self.approach}-{self.maneuver}")

    def __str__(self) -> str:
        return f"{self.approach}-{self.maneuver}"

    @classmethod
    def parse(cls, text: str) -> "Movement":
        approach, sep, maneuver = text.partition("-")
        if not sep:
            raise ValueError(f"bad movement {text!r}")
        return cls(approach, maneuver)

    @property
    def long_name(self) -> str:
        return f"{APPROACHES[self.approach]} {MANEUVERS[self.maneuver]}"


@dataclass(frozen=True)
class BsmRecord:
    temp_id: str
    ts_ms: int
    pos: GeoPoint
    speed_mps: float
    heading_deg: float
    width_m: float
    length_m: float

    def __post_init__(self) -> None:
        if not _TEMP_ID.fullmatch(self.temp_id):
            raise InvariantViolation("temp_id", "expected 8 hex characters")
        if self.ts_ms <= 0:
            raise InvariantViolation("ts_ms", "must be positive")
        for name in ("speed_mps", "heading_deg", "width_m", "length_m"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvariantViolation(name, "not finite")
            object.__setattr__(self, name, v + 0.0 if v != 0.0 else 0.0)
        if self.speed_mps < 0:
            raise InvariantViolation("speed_mps", "negative")
        if not 0.0 <= self.heading_deg < 360.0:
            raise InvariantViolation("heading_deg", "outside [0, 360)")
        if self.width_m <= 0:
            raise InvariantViolation("width_m", "must be positive")
        if self.length_m <= 0:
            raise InvariantViolation("length_m", "must be positive")


@dataclass(frozen=True)
class PhaseStateEntry:
    signal_group: int
    phase: SignalPhaseState
    remaining_s: float

    def __post_init__(self) -> None:
        if self.signal_group <= 0:
            raise InvariantViolation("signal_group", "must be positive")
        v = float(self.remaining_s)
        if not math.isfinite(v) or v < 0:
            raise InvariantViolation("remaining_s", "must be finite and >= 0")
        object.__setattr__(self, "remaining_s", v if v != 0.0 else 0.0)


@dataclass(frozen=True)
class SpatRecord:
    intersection_id: str
    ts_ms: int
    states: tuple[PhaseStateEntry, ...]

    def __post_init__(self) -> None:
        if not self.intersection_id:
            raise InvariantViolation("intersection_id", "empty")
        if self.ts_ms <= 0:
            raise InvariantViolation("ts_ms", "must be positive")
        states = tuple(sorted(self.states, key=lambda s: s.signal_group))
        groups = [s.signal_group for s in states]
        if len(set(groups)) != len(groups):
            raise InvariantViolation("states", "duplicate signal_group")
        object.__setattr__(self, "states", states)

    def state_for(self, signal_group: int) -> Optional[PhaseStateEntry]:
        for s in self.states:
            if s.signal_group == signal_group:
                return s
        return None


@dataclass(frozen=True)
class LaneRef:
    intersection_id: str
    lane_id: int


@dataclass(frozen=True)
class LaneGeometry:
    lane_id: int
    polygon: tuple[GeoPoint, ...]
    movement: Movement
    signal_group: Optional[int] = None
    connects_to: tuple[LaneRef, ...] = ()

    def __post_init__(self) -> None:
        if self.lane_id <= 0:
            raise InvariantViolation("lane_id", "must be positive")
        if self.signal_group is not None and self.signal_group <= 0:
            raise InvariantViolation("signal_group", "must be positive")
        pts = geo.ring_vertices(self.polygon)
        if len(pts) < 3:
            raise InvariantViolation("polygon", "needs at least 3 vertices")
        origin = geo.ring_origin(pts)
        xy = [(e.east_m, e.north_m) for e in (geo.to_enu(origin, p) for p in pts)]
        if not geo.polygon_is_simple(xy):
            raise InvariantViolation("polygon", f"lane {self.lane_id} ring is self-intersecting")
        if geo.signed_area(xy) < 0:
            pts.reverse()
        object.__setattr__(self, "polygon", tuple(pts))
        object.__setattr__(self, "connects_to", tuple(self.connects_to))


@dataclass(frozen=True)
class IntersectionMap:
    intersection_id: str
    name: str
    ref_point: GeoPoint
    lanes: tuple[LaneGeometry, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.intersection_id:
            raise InvariantViolation("intersection_id", "empty")
        lanes = tuple(sorted(self.lanes, key=lambda l: l.lane_id))
        ids = [l.lane_id for l in lanes]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("lanes", "duplicate lane_id")
        object.__setattr__(self, "lanes", lanes)

    def lane(self, lane_id: int) -> Optional[LaneGeometry]:
        for l in self.lanes:
            if l.lane_id == lane_id:
                return l
        return None

    def check_ref_point(self) -> bool:
        """True when the reference point lies inside the lanes' convex hull."""
        pts = [p for l in self.lanes for p in l.polygon]
        if len(pts) < 3:
            return False
        try:
            xy = [(e.east_m, e.north_m) for e in (geo.to_enu(self.ref_point, p) for p in pts)]
        except geo.RangeExceeded:
            return False
        hull = geo.convex_hull(xy)
        if len(hull) < 3:
            return False
        return geo._contains_xy(0.0, 0.0, hull)


V2xMessage = Union[BsmRecord, SpatRecord, IntersectionMap]


def message_ts(msg: V2xMessage) -> Optional[int]:
    return getattr(msg, "ts_ms", None)


def message_type(msg: V2xMessage) -> str:
    if isinstance(msg, BsmRecord):
        return "BSM"
    if isinstance(msg, SpatRecord):
        return "SPAT"
    if isinstance(msg, IntersectionMap):
        return "MAP"
    raise TypeError(f"not a V2X message: {type(msg).__name__}")


# ------------------------------------------------------------------ parsing

def _reject_constant(name: str) -> Any:
    raise MalformedFrame(f"non-finite JSON constant {name}")


def _get(obj: dict, key: str, kind: type, path: str = "", optional: bool = False) -> Any:
    name = f"{path}{key}"
    if key not in obj or obj[key] is None:
        if optional:
            return None
        raise SchemaViolation(name, "missing")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(name, "expected number")
        try:
            return float(value)
        except OverflowError:
            raise InvariantViolation(name, "number out of range") from None
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(name, "expected integer")
        return value
    if not isinstance(value, kind):
        raise SchemaViolation(name, f"expected {kind.__name__}")
    return value


def _geopoint(lat: float, lon: float, elev: Optional[float], prefix: str = "") -> GeoPoint:
    try:
        return GeoPoint(lat, lon, elev)
    except ValueError as exc:
        bad = "lat" if "lat" in str(exc) else "lon" if "lon" in str(exc) else "elev_m"
        raise InvariantViolation(prefix + bad, str(exc)) from None


def _build(where: str, fn, /, *args, **kwargs):
    # Wrap constructor-level ValueErrors that are not already typed.
    try:
        return fn(*args, **kwargs)
    except CodecError:
        raise
    except ValueError as exc:
        raise InvariantViolation(where, str(exc)) from None


def _parse_bsm(obj: dict) -> BsmRecord:
    pos = _geopoint(
        _get(obj, "lat", float), _get(obj, "lon", float), _get(obj, "elev_m", float, optional=True)
    )
    return _build(
        "bsm",
        BsmRecord,
        temp_id=_get(obj, "temp_id", str),
        ts_ms=_get(obj, "ts_ms", int),
        pos=pos,
        speed_mps=_get(obj, "speed_mps", float),
        heading_deg=_get(obj, "heading_deg", float),
        width_m=_get(obj, "width_m", float),
        length_m=_get(obj, "length_m", float),
    )


def _parse_phase(value: Any, name: str) -> SignalPhaseState:
    if not isinstance(value, str):
        raise SchemaViolation(name, "expected string")
    try:
        return SignalPhaseState(value)
    except ValueError:
        raise SchemaViolation(name, f"unknown phase {value!r}") from None


def _parse_spat(obj: dict) -> SpatRecord:
    raw_states = _get(obj, "states", list)
    states = []
    for i, s in enumerate(raw_states):
        path = f"states[{i}]."
        if not isinstance(s, dict):
            raise SchemaViolation(f"states[{i}]", "expected object")
        states.append(
            _build(
                f"states[{i}]",
                PhaseStateEntry,
                signal_group=_get(s, "signal_group", int, path),
                phase=_parse_phase(_get(s, "phase", str, path), path + "phase"),
                remaining_s=_get(s, "remaining_s", float, path),
            )
        )
    return _build(
        "spat",
        SpatRecord,
        intersection_id=_get(obj, "intersection_id", str),
        ts_ms=_get(obj, "ts_ms", int),
        states=tuple(states),
    )


def _parse_point_pair(value: Any, name: str) -> GeoPoint:
    if not isinstance(value, list) or len(value) not in (2, 3):
        raise SchemaViolation(name, "expected [lat, lon] pair")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaViolation(name, "expected numbers")
    return _geopoint(value[0], value[1], value[2] if len(value) == 3 else None, name + ".")


def _parse_map(obj: dict) -> IntersectionMap:
    ref = _get(obj, "ref", dict)
    ref_point = _geopoint(
        _get(ref, "lat", float, "ref."), _get(ref, "lon", float, "ref."),
        _get(ref, "elev_m", float, "ref.", optional=True), "ref.",
    )
    lanes = []
    for i, raw in enumerate(_get(obj, "lanes", list)):
        path = f"lanes[{i}]."
        if not isinstance(raw, dict):
            raise SchemaViolation(f"lanes[{i}]", "expected object")
        polygon = tuple(
            _parse_point_pair(v, f"{path}polygon[{k}]") for k, v in enumerate(_get(raw, "polygon", list, path))
        )
        try:
            movement = Movement.parse(_get(raw, "movement", str, path))
        except ValueError as exc:
            raise SchemaViolation(path + "movement", str(exc)) from None
        conns = []
        for k, c in enumerate(_get(raw, "connects_to", list, path)):
            cpath = f"{path}connects_to[{k}]."
            if not isinstance(c, dict):
                raise SchemaViolation(cpath[:-1], "expected object")
            conns.append(LaneRef(_get(c, "intersection_id", str, cpath), _get(c, "lane_id", int, cpath)))
        lanes.append(
            _build(
                f"lanes[{i}]",
                LaneGeometry,
                lane_id=_get(raw, "lane_id", int, path),
                polygon=polygon,
                movement=movement,
                signal_group=_get(raw, "signal_group", int, path, optional=True),
                connects_to=tuple(conns),
            )
        )
    m = _build(
        "map",
        IntersectionMap,
        intersection_id=_get(obj, "intersection_id", str),
        name=_get(obj, "name", str),
        ref_point=ref_point,
        lanes=tuple(lanes),
    )
    if m.lanes and not m.check_ref_point():
        logger.warning("MAP %s: ref_point outside the lanes' convex hull", m.intersection_id)
    return m


_PARSERS = {"BSM": _parse_bsm, "SPAT": _parse_spat, "MAP": _parse_map}


def parse_obj(obj: Any) -> V2xMessage:
    if not isinstance(obj, dict):
        raise MalformedFrame("top-level JSON value is not an object")
    kind = obj.get("type")
    if kind is None:
        raise SchemaViolation("type", "missing")
    if kind not in _PARSERS:
        raise SchemaViolation("type", f"unknown message type {kind!r}")
    return _PARSERS[kind](obj)


def parse_line(line: Union[str, bytes, bytearray]) -> V2xMessage:
    """Parse one JSONL line into a validated record.

    Raises MalformedFrame, SchemaViolation or InvariantViolation and nothing
    else, whatever the input.
    """
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"invalid UTF-8: {exc.reason}") from None
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except MalformedFrame:
        raise
    except (ValueError, RecursionError) as exc:
        raise MalformedFrame(f"not parseable JSON: {exc}") from None
    try:
        return parse_obj(obj)
    except CodecError:
        raise
    except (ValueError, TypeError, AttributeError, RecursionError, ArithmeticError) as exc:
        # Belt and braces: anything the typed paths missed still surfaces typed.
        raise SchemaViolation("message", str(exc)) from None


# ------------------------------------------------------------ serialization

def _point_obj(p: GeoPoint) -> dict:
    out = {"lat": p.lat_deg, "lon": p.lon_deg}
    if p.elev_m is not None:
        out["elev_m"] = p.elev_m
    return out


def to_obj(msg: V2xMessage) -> dict:
    if isinstance(msg, BsmRecord):
        body = {
            "temp_id": msg.temp_id,
            "ts_ms": msg.ts_ms,
            "speed_mps": msg.speed_mps,
            "heading_deg": msg.heading_deg,
            "width_m": msg.width_m,
            "length_m": msg.length_m,
            **_point_obj(msg.pos),
        }
    elif isinstance(msg, SpatRecord):
        body = {
            "intersection_id": msg.intersection_id,
            "ts_ms": msg.ts_ms,
            "states": [
                {"phase": s.phase.value, "remaining_s": s.remaining_s, "signal_group": s.signal_group}
                for s in msg.states
            ],
        }
    elif isinstance(msg, IntersectionMap):
        lanes = []
        for l in msg.lanes:
            lane = {
                "lane_id": l.lane_id,
                "movement": str(l.movement),
                "polygon": [
                    [p.lat_deg, p.lon_deg] + ([p.elev_m] if p.elev_m is not None else []) for p in l.polygon
                ],
                "connects_to": [
                    {"intersection_id": c.intersection_id, "lane_id": c.lane_id} for c in l.connects_to
                ],
            }
            if l.signal_group is not None:
                lane["signal_group"] = l.signal_group
            lanes.append(lane)
        body = {
            "intersection_id": msg.intersection_id,
            "name": msg.name,
            "ref": _point_obj(msg.ref_point),
            "lanes": lanes,
        }
    else:
        raise TypeError(f"not a V2X message: {type(msg).__name__}")
    return {"type": message_type(msg), **body}


def canonical_json(obj: dict) -> str:
    """Dump ``obj`` with ``type`` first and all other keys sorted."""
    kind = obj.get("type")
    rest = json.dumps({k: v for k, v in obj.items() if k != "type"}, sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    if kind is None:
        return rest
    head = '{"type":' + json.dumps(kind, ensure_ascii=False)
    return head + ("}" if rest == "{}" else "," + rest[1:])


def serialize(msg: V2xMessage) -> str:
    return canonical_json(to_obj(msg))


def frame_encode(msg: V2xMessage) -> bytes:
    payload = serialize(msg).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_FRAME_BYTES}")
    return _HEADER.pack(len(payload)) + payload


def frame_split(buf: bytes) -> tuple[bytes, bytes]:
    """Split one frame's payload off the front of ``buf``; returns (payload, rest)."""
    if len(buf) < _HEADER.size:
        raise TruncatedFrame(f"need {_HEADER.size} header bytes, have {len(buf)}")
    (n,) = _HEADER.unpack_from(buf)
    if n > MAX_FRAME_BYTES:
        raise OversizeFrame(f"declared length {n} exceeds {MAX_FRAME_BYTES}")
    end = _HEADER.size + n
    if len(buf) < end:
        raise TruncatedFrame(f"declared {n} payload bytes, have {len(buf) - _HEADER.size}")
    return bytes(buf[_HEADER.size:end]), bytes(buf[end:])


def frame_decode(buf: bytes) -> V2xMessage:
    payload, rest = frame_split(buf)
    if rest:
        raise MalformedFrame(f"{len(rest)} trailing bytes after frame")
    return parse_line(payload)
