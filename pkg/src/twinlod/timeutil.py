"""UTC millisecond timestamps and their wire rendering.

All generated timestamps in the stack are integers (milliseconds since
the epoch, UTC) internally and RFC-3339-style strings on the wire,
e.g. ``2026-08-19T12:34:56.789Z``.
"""

from __future__ import annotations

import time
from datetime import datetime, timezone


def utc_now_ms() -> int:
    return time.time_ns() // 1_000_000


def format_ms(ms: int) -> str:
    """Render epoch milliseconds as an RFC-3339 UTC string with ms precision."""
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return f"{dt.strftime('%Y-%m-%dT%H:%M:%S')}.{ms % 1000:03d}Z"


def parse_ms(value: str) -> int:
    """Parse the wire rendering produced by :func:`format_ms`."""
    dt = datetime.strptime(value, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)
