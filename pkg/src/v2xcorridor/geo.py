"""Geodesic and local-plane geometry for corridor-scale work.

Distances use a spherical Earth. Planar operations (containment, point to
edge distance, dead reckoning) run in an equirectangular east/north frame
anchored at a declared origin, which is accurate to well under a centimetre
per hundred metres at the latitudes and extents a corridor covers.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

EARTH_RADIUS_M = 6_371_000.0
ENU_LIMIT_M = 100_000.0
# Boundary tolerance for containment, in metres.
EDGE_EPS_M = 1e-6


class GeoError(ValueError):
    """Base class for geometry errors."""


class DegenerateInput(GeoError):
    pass


class InvalidRing(GeoError):
    pass


class RangeExceeded(GeoError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    """WGS-84 position in degrees with optional elevation in metres."""

    lat_deg: float
    lon_deg: float
    elev_m: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("lat_deg", "lon_deg", "elev_m"):
            value = getattr(self, name)
            if value is None:
                continue
            value = float(value)
            if value == 0.0:
                value = 0.0  # drop negative zero
            object.__setattr__(self, name, value)
        if not (math.isfinite(self.lat_deg) and -90.0 <= self.lat_deg <= 90.0):
            raise ValueError(f"lat_deg out of range: {self.lat_deg}")
        if not (math.isfinite(self.lon_deg) and -180.0 <= self.lon_deg <= 180.0):
            raise ValueError(f"lon_deg out of range: {self.lon_deg}")
        if self.elev_m is not None and not math.isfinite(self.elev_m):
            raise ValueError(f"elev_m not finite: {self.elev_m}")

    def same_place(self, other: "GeoPoint") -> bool:
        return self.lat_deg == other.lat_deg and self.lon_deg == other.lon_deg


@dataclass(frozen=True)
class EnuPoint:
    east_m: float
    north_m: float

    def __post_init__(self) -> None:
        for v in (self.east_m, self.north_m):
            if not math.isfinite(v):
                raise RangeExceeded("ENU coordinate not finite")
            if abs(v) >= ENU_LIMIT_M:
                raise RangeExceeded(f"ENU coordinate {v:.1f} m exceeds corridor guard")

    def norm(self) -> float:
        return math.hypot(self.east_m, self.north_m)


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    phi1 = math.radians(a.lat_deg)
    phi2 = math.radians(b.lat_deg)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon_deg - a.lon_deg)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from ``a`` to ``b``; 0 is north, clockwise."""
    if a.same_place(b):
        raise DegenerateInput("bearing undefined for coincident points")
    phi1 = math.radians(a.lat_deg)
    phi2 = math.radians(b.lat_deg)
    dlam = math.radians(b.lon_deg - a.lon_deg)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    deg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if deg >= 360.0 else deg


def to_enu(origin: GeoPoint, p: GeoPoint) -> EnuPoint:
    dlon = p.lon_deg - origin.lon_deg
    if dlon > 180.0:
        dlon -= 360.0
    elif dlon < -180.0:
        dlon += 360.0
    east = EARTH_RADIUS_M * math.cos(math.radians(origin.lat_deg)) * math.radians(dlon)
    north = EARTH_RADIUS_M * math.radians(p.lat_deg - origin.lat_deg)
    return EnuPoint(east, north)


def from_enu(origin: GeoPoint, e: EnuPoint) -> GeoPoint:
    lat = origin.lat_deg + math.degrees(e.north_m / EARTH_RADIUS_M)
    coslat = math.cos(math.radians(origin.lat_deg))
    if coslat <= 0.0:
        raise RangeExceeded("ENU frame undefined at the poles")
    lon = origin.lon_deg + math.degrees(e.east_m / (EARTH_RADIUS_M * coslat))
    if lon > 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    if not -90.0 <= lat <= 90.0:
        raise RangeExceeded("projected latitude leaves the valid range")
    return GeoPoint(lat, lon)


# ---------------------------------------------------------------- planar helpers

def ring_vertices(ring: Sequence[GeoPoint]) -> list[GeoPoint]:
    """Vertices of ``ring`` without a repeated closing point."""
    pts = list(ring)
    if len(pts) > 1 and pts[0].same_place(pts[-1]):
        pts = pts[:-1]
    return pts


def ring_origin(ring: Sequence[GeoPoint]) -> GeoPoint:
    pts = ring_vertices(ring)
    return GeoPoint(
        sum(p.lat_deg for p in pts) / len(pts),
        sum(p.lon_deg for p in pts) / len(pts),
    )


def _cross(ox: float, oy: float, ax: float, ay: float, bx: float, by: float) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def segments_intersect(a, b, c, d) -> bool:
    """Closed-segment intersection test for 2-tuples."""
    d1 = _cross(*c, *d, *a)
    d2 = _cross(*c, *d, *b)
    d3 = _cross(*a, *b, *c)
    d4 = _cross(*a, *b, *d)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if d1 == 0 and _on_segment(*a, *c, *d):
        return True
    if d2 == 0 and _on_segment(*b, *c, *d):
        return True
    if d3 == 0 and _on_segment(*c, *a, *b):
        return True
    if d4 == 0 and _on_segment(*d, *a, *b):
        return True
    return False


def polygon_is_simple(xy: Sequence[tuple[float, float]]) -> bool:
    n = len(xy)
    if n < 3:
        return False
    for i in range(n):
        a, b = xy[i], xy[(i + 1) % n]
        if a == b:
            return False
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            c, d = xy[j], xy[(j + 1) % n]
            if segments_intersect(a, b, c, d):
                return False
    return True


def signed_area(xy: Sequence[tuple[float, float]]) -> float:
    s = 0.0
    n = len(xy)
    for i in range(n):
        x1, y1 = xy[i]
        x2, y2 = xy[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s / 2.0


def convex_hull(xy: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Andrew's monotone chain; counter-clockwise, no repeated endpoint."""
    pts = sorted(set(xy))
    if len(pts) <= 2:
        return pts
    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(*lower[-2], *lower[-1], *p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(*upper[-2], *upper[-1], *p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _planar(origin: GeoPoint, pts: Sequence[GeoPoint]) -> list[tuple[float, float]]:
    out = []
    for p in pts:
        e = to_enu(origin, p)
        out.append((e.east_m, e.north_m))
    return out


def _checked_ring(ring: Sequence[GeoPoint]) -> tuple[GeoPoint, list[tuple[float, float]]]:
    return _checked_ring_cached(tuple(ring))


@functools.lru_cache(maxsize=4096)
def _checked_ring_cached(ring: tuple[GeoPoint, ...]) -> tuple[GeoPoint, list[tuple[float, float]]]:
    pts = ring_vertices(ring)
    if len(pts) < 3:
        raise InvalidRing(f"ring needs at least 3 vertices, got {len(pts)}")
    origin = ring_origin(pts)
    xy = _planar(origin, pts)
    if not polygon_is_simple(xy):
        raise InvalidRing("ring is self-intersecting or has repeated vertices")
    return origin, xy


def _point_segment_m(px: float, py: float, a, b) -> float:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0.0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _contains_xy(px: float, py: float, xy: Sequence[tuple[float, float]]) -> bool:
    n = len(xy)
    for i in range(n):
        if _point_segment_m(px, py, xy[i], xy[(i + 1) % n]) <= EDGE_EPS_M:
            return True
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = xy[i]
        xj, yj = xy[j]
        if (yi > py) != (yj > py):
            x_cross = xi + (py - yi) * (xj - xi) / (yj - yi)
            if px < x_cross:
                inside = not inside
        j = i
    return inside


def point_in_polygon(p: GeoPoint, ring: Sequence[GeoPoint]) -> bool:
    """Ray-casting containment; points on the boundary count as inside."""
    origin, xy = _checked_ring(ring)
    e = to_enu(origin, p)
    return _contains_xy(e.east_m, e.north_m, xy)


def point_to_ring_m(p: GeoPoint, ring: Sequence[GeoPoint]) -> float:
    origin, xy = _checked_ring(ring)
    e = to_enu(origin, p)
    if _contains_xy(e.east_m, e.north_m, xy):
        return 0.0
    n = len(xy)
    return min(_point_segment_m(e.east_m, e.north_m, xy[i], xy[(i + 1) % n]) for i in range(n))


def polygon_centroid(ring: Sequence[GeoPoint]) -> GeoPoint:
    """Area centroid of a simple ring."""
    origin, xy = _checked_ring(ring)
    a = signed_area(xy)
    cx = cy = 0.0
    n = len(xy)
    for i in range(n):
        x1, y1 = xy[i]
        x2, y2 = xy[(i + 1) % n]
        f = x1 * y2 - x2 * y1
        cx += (x1 + x2) * f
        cy += (y1 + y2) * f
    cx /= 6.0 * a
    cy /= 6.0 * a
    return from_enu(origin, EnuPoint(cx, cy))
