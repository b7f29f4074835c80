"""Route geometry, centerline queries and lane-marking sampling.

Everything here is evaluation-side ground truth. The client-side controller
never sees it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from . import _kernels as K

ROUTE_IDS = ("A", "B", "C", "A_key", "B_key", "C_key")
LANE_HALF_WIDTH = 1.75
KEY_MARGIN = 10.0
# 90-degree turns; tighter turns push the inner boundary out of the BEV grid
TURN_RADIUS = 30.0
ENVELOPE = 50.0
# straight lead-in / run-out drawn before the start and after the finish
RENDER_EXTENSION = 60.0
RENDER_PIECE = 10.0


class OutOfEnvelope(ValueError):
    """Raised when a queried position is too far from the centerline."""


@dataclass(frozen=True)
class Straight:
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("straight length must be positive")


@dataclass(frozen=True)
class Arc:
    radius: float
    sweep: float  # signed, positive = left turn

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("arc radius must be positive")
        if self.sweep == 0:
            raise ValueError("arc sweep must be non-zero")

    @property
    def length(self) -> float:
        return self.radius * abs(self.sweep)


Segment = Union[Straight, Arc]


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def _pack(segments, x0, y0, h0, s0) -> np.ndarray:
    rows = []
    x, y, h, s = x0, y0, h0, s0
    for seg in segments:
        row = np.zeros(K.NCOLS)
        row[K.S0] = s
        row[K.LENGTH] = seg.length
        row[K.SX], row[K.SY] = x, y
        row[K.SCOS], row[K.SSIN] = math.cos(h), math.sin(h)
        row[K.HEADING0] = h
        if isinstance(seg, Straight):
            row[K.KIND] = K.STRAIGHT
            ex = x + seg.length * math.cos(h)
            ey = y + seg.length * math.sin(h)
            eh = h
            row[K.BCX], row[K.BCY] = (x + ex) / 2, (y + ey) / 2
            row[K.BR] = seg.length / 2
        else:
            sg = 1.0 if seg.sweep > 0 else -1.0
            r = seg.radius
            cx = x - sg * r * math.sin(h)
            cy = y + sg * r * math.cos(h)
            eh = h + seg.sweep
            ex = cx + sg * r * math.sin(eh)
            ey = cy - sg * r * math.cos(eh)
            row[K.KIND] = K.ARC
            row[K.RADIUS] = r
            row[K.SWEEP] = seg.sweep
            row[K.SIGN] = sg
            row[K.CX], row[K.CY] = cx, cy
            row[K.U0X], row[K.U0Y] = (x - cx) / r, (y - cy) / r
            row[K.U1X], row[K.U1Y] = (ex - cx) / r, (ey - cy) / r
            # every arc point lies within the chord from the midpoint to an end
            mh = h + seg.sweep / 2
            row[K.BCX] = cx + sg * r * math.sin(mh)
            row[K.BCY] = cy - sg * r * math.cos(mh)
            row[K.BR] = 2 * r * math.sin(abs(seg.sweep) / 4) * (1 + 1e-12) + 1e-9
        row[K.EX], row[K.EY] = ex, ey
        row[K.ECOS], row[K.ESIN] = math.cos(eh), math.sin(eh)
        rows.append(row)
        x, y, h, s = ex, ey, eh, s + seg.length
    return np.array(rows)


def _split(segments, max_len):
    out = []
    for seg in segments:
        n = max(1, math.ceil(seg.length / max_len))
        if isinstance(seg, Straight):
            out.extend([Straight(seg.length / n)] * n)
        else:
            out.extend([Arc(seg.radius, seg.sweep / n)] * n)
    return out


@dataclass(frozen=True)
class RouteGeometry:
    route_id: str
    segments: tuple
    lane_half_width: float = LANE_HALF_WIDTH
    key_interval: tuple = None
    start: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("route needs at least one segment")
        if self.lane_half_width <= 0:
            raise ValueError("lane_half_width must be positive")
        if self.key_interval is None:
            object.__setattr__(self, "key_interval", (0.0, self.total_length))
        lo, hi = self.key_interval
        if not (0.0 <= lo < hi <= self.total_length + 1e-9):
            raise ValueError(f"key_interval {self.key_interval} outside route")

    @cached_property
    def total_length(self) -> float:
        return float(sum(seg.length for seg in self.segments))

    @cached_property
    def table(self) -> np.ndarray:
        return _pack(self.segments, *self.start, 0.0)

    @cached_property
    def render_table(self) -> np.ndarray:
        """Short pieces of the route plus straight lead-in and run-out."""
        x0, y0, h0 = self.start
        ext = RENDER_EXTENSION
        pieces = _split([Straight(ext), *self.segments, Straight(ext)], RENDER_PIECE)
        table = _pack(pieces, x0 - ext * math.cos(h0), y0 - ext * math.sin(h0), h0, -ext)
        return np.ascontiguousarray(table)

    @property
    def scoring_window(self) -> tuple:
        return self.key_interval

    def pose_at(self, s: float) -> tuple:
        """Centerline (x, y, heading) at arc length s; linear beyond the ends."""
        t = self.table
        if s <= 0.0:
            row = t[0]
            return row[K.SX] + s * row[K.SCOS], row[K.SY] + s * row[K.SSIN], row[K.HEADING0]
        if s >= self.total_length:
            row = t[-1]
            u = s - self.total_length
            return (row[K.EX] + u * row[K.ECOS], row[K.EY] + u * row[K.ESIN],
                    wrap_angle(row[K.HEADING0] + (row[K.SWEEP] if row[K.KIND] == K.ARC else 0.0)))
        i = int(np.searchsorted(t[:, K.S0], s, side="right")) - 1
        row = t[i]
        u = s - row[K.S0]
        if row[K.KIND] == K.STRAIGHT:
            return row[K.SX] + u * row[K.SCOS], row[K.SY] + u * row[K.SSIN], row[K.HEADING0]
        sg = 1.0 if row[K.SWEEP] > 0 else -1.0
        a = u / row[K.RADIUS]
        h = row[K.HEADING0] + sg * a
        r = row[K.RADIUS]
        return row[K.CX] + sg * r * math.sin(h), row[K.CY] - sg * r * math.cos(h), wrap_angle(h)

    def to_json(self, step: float = 1.0) -> str:
        segs = []
        for seg in self.segments:
            if isinstance(seg, Straight):
                segs.append({"type": "straight", "length": seg.length})
            else:
                segs.append({"type": "arc", "radius": seg.radius, "sweep": seg.sweep})
        n = max(2, int(math.ceil(self.total_length / step)) + 1)
        pts = [list(self.pose_at(s)[:2]) for s in np.linspace(0.0, self.total_length, n)]
        return json.dumps({
            "route_id": self.route_id,
            "lane_half_width": self.lane_half_width,
            "total_length": self.total_length,
            "key_interval": list(self.key_interval),
            "segments": segs,
            "centerline": pts,
        }, indent=1)


@dataclass(frozen=True)
class CenterlineQuery:
    s: float
    cross_track_e: float
    heading_error: float


_GEOMETRY = {
    "A": (Straight(40.0), Arc(TURN_RADIUS, -math.pi / 2), Straight(150.0)),
    "B": (Arc(TURN_RADIUS, math.pi / 2), Straight(30.0), Arc(50.0, 2 * math.pi / 3)),
    "C": (Straight(30.0), Arc(60.0, -5 * math.pi / 6)),
}
# index of the steering-intensive segment each key subset is built around
_KEY_SEGMENT = {"A": 1, "B": 2, "C": 1}


def build_route(route_id: str) -> RouteGeometry:
    """Fixed route geometry; ``*_key`` ids narrow the scoring window."""
    if route_id not in ROUTE_IDS:
        raise ValueError(f"unknown route_id {route_id!r}; expected one of {ROUTE_IDS}")
    parent = route_id.split("_")[0]
    segments = _GEOMETRY[parent]
    if not route_id.endswith("_key"):
        return RouteGeometry(route_id, segments)
    k = _KEY_SEGMENT[parent]
    s_lo = sum(seg.length for seg in segments[:k])
    s_hi = s_lo + segments[k].length
    total = sum(seg.length for seg in segments)
    window = (max(0.0, s_lo - KEY_MARGIN), min(total, s_hi + KEY_MARGIN))
    return RouteGeometry(route_id, segments, key_interval=window)


def locate(route: RouteGeometry, position, heading: float) -> CenterlineQuery:
    px, py = float(position[0]), float(position[1])
    s, e, th, dist = K.locate_point(route.table, px, py)
    if dist > ENVELOPE:
        raise OutOfEnvelope(f"position ({px:.2f}, {py:.2f}) is {dist:.2f} m from the centerline")
    return CenterlineQuery(s=float(s), cross_track_e=float(e), heading_error=wrap_angle(heading - th))


def sample_markings(route: RouteGeometry, s_range, step: float):
    """Left and right lane boundary polylines, each an (n, 2) array."""
    s_lo, s_hi = float(s_range[0]), float(s_range[1])
    if step <= 0:
        raise ValueError("step must be positive")
    if not s_hi > s_lo:
        raise ValueError(f"empty s_range {s_range}")
    n = int(math.floor((s_hi - s_lo) / step + 1e-9)) + 1
    ss = s_lo + step * np.arange(n)
    if ss[-1] < s_hi - 1e-9:
        ss = np.append(ss, s_hi)
    hw = route.lane_half_width
    left = np.empty((len(ss), 2))
    right = np.empty((len(ss), 2))
    for k, s in enumerate(ss):
        x, y, h = route.pose_at(float(s))
        nx, ny = -math.sin(h), math.cos(h)
        left[k] = (x + hw * nx, y + hw * ny)
        right[k] = (x - hw * nx, y - hw * ny)
    return left, right
