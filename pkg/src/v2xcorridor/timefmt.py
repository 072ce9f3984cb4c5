"""UTC epoch-millisecond helpers for the text formats the templates use."""

from __future__ import annotations

import datetime as dt
import re

_UTC = dt.timezone.utc


def _dt(ts_ms: int) -> dt.datetime:
    return dt.datetime.fromtimestamp(ts_ms // 1000, _UTC)


def format_ts_cs(ts_ms: int) -> str:
    """``YYYY-MM-DD HH:MM:SS.ss`` (centiseconds, half-up)."""
    cs = (ts_ms + 5) // 10
    return _dt(cs // 100 * 1000).strftime("%Y-%m-%d %H:%M:%S") + f".{cs % 100:02d}"


def format_clock_cs(ts_ms: int) -> str:
    """``HH:MM:SS.ss``."""
    return format_ts_cs(ts_ms)[11:]


def format_ts_s(ts_ms: int) -> str:
    """``YYYY-MM-DD HH:MM:SS`` rounded to the whole second (half-up)."""
    return _dt((ts_ms + 500) // 1000 * 1000).strftime("%Y-%m-%d %H:%M:%S")


_TS = re.compile(
    r"(\d{4})-(\d{2})-(\d{2})[ T](\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,6}))?(Z|[+-]\d{2}:\d{2})?"
)


def parse_ts(text: str) -> int:
    """Parse ``YYYY-MM-DD[ T]HH:MM:SS[.f...]`` (UTC unless an offset is given) to epoch ms."""
    m = _TS.fullmatch(text.strip())
    if m is None:
        raise ValueError(f"unrecognised timestamp {text!r}")
    y, mo, d, h, mi, s = (int(g) for g in m.groups()[:6])
    frac = m.group(7) or ""
    tz = _UTC
    if m.group(8) and m.group(8) != "Z":
        sign = 1 if m.group(8)[0] == "+" else -1
        hh, mm = int(m.group(8)[1:3]), int(m.group(8)[4:6])
        tz = dt.timezone(sign * dt.timedelta(hours=hh, minutes=mm))
    stamp = dt.datetime(y, mo, d, h, mi, s, tzinfo=tz)
    whole = int((stamp - dt.datetime(1970, 1, 1, tzinfo=_UTC)).total_seconds())
    return whole * 1000 + round(int(frac.ljust(6, "0")) / 1000) if frac else whole * 1000


def parse_clock_near(text: str, ref_ms: int) -> int:
    """Resolve ``HH:MM:SS[.ss]`` to the first instant at or after the day of ``ref_ms``
    that is not earlier than ``ref_ms`` by more than 12 hours."""
    day = _dt(ref_ms).strftime("%Y-%m-%d")
    ms = parse_ts(f"{day} {text}")
    if ms < ref_ms - 43_200_000:
        ms += 86_400_000
    return ms
