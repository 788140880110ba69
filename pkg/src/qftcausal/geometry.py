"""Causal structure of 1+1 Minkowski space with c = 1.

Regions are finite unions of closed, axis-aligned rectangles in the (t, x)
plane.  Because a rectangle is a product of intervals, the set of separation
vectors between two rectangles is itself a rectangle, and every relation
below is decided exactly from interval endpoints.  Lightlike separation is
treated as causal throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator


class GeometryError(ValueError):
    """Raised for malformed points, rectangles or regions."""


class CausalRelation(str, Enum):
    Q_IN_FUTURE_OF_P = "q_in_future_of_p"
    Q_IN_PAST_OF_P = "q_in_past_of_p"
    SPACELIKE = "spacelike"


class RegionRelation(str, Enum):
    STRICTLY_SPACELIKE = "strictly_spacelike"
    CAUSALLY_CONNECTED = "causally_connected"
    TOTALLY_TIMELIKE_A_BEFORE_B = "totally_timelike_A_before_B"
    TOTALLY_TIMELIKE_B_BEFORE_A = "totally_timelike_B_before_A"


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise GeometryError(f"non-finite coordinate {v!r}")


@dataclass(frozen=True)
class Point:
    t: float
    x: float

    def __post_init__(self) -> None:
        _finite(self.t, self.x)


@dataclass(frozen=True)
class Rect:
    """Closed rectangle ``[t_lo, t_hi] x [x_lo, x_hi]``."""

    t_lo: float
    t_hi: float
    x_lo: float
    x_hi: float

    def __post_init__(self) -> None:
        _finite(self.t_lo, self.t_hi, self.x_lo, self.x_hi)
        if self.t_lo >= self.t_hi or self.x_lo >= self.x_hi:
            raise GeometryError(
                f"empty or inverted rectangle t=[{self.t_lo}, {self.t_hi}], "
                f"x=[{self.x_lo}, {self.x_hi}]"
            )

    @classmethod
    def square(cls, center: Point | tuple[float, float], half_width: float) -> "Rect":
        c = center if isinstance(center, Point) else Point(*center)
        return cls(c.t - half_width, c.t + half_width, c.x - half_width, c.x + half_width)

    @property
    def center(self) -> Point:
        return Point(0.5 * (self.t_lo + self.t_hi), 0.5 * (self.x_lo + self.x_hi))

    def contains(self, p: Point) -> bool:
        return self.t_lo <= p.t <= self.t_hi and self.x_lo <= p.x <= self.x_hi

    def corners(self) -> tuple[Point, ...]:
        return tuple(Point(t, x) for t in (self.t_lo, self.t_hi) for x in (self.x_lo, self.x_hi))


@dataclass(frozen=True)
class RegionSet:
    """Finite union of rectangles (possibly overlapping)."""

    rects: tuple[Rect, ...]

    def __init__(self, rects: Iterable[Rect]):
        rects = tuple(rects)
        if not rects:
            raise GeometryError("a region needs at least one rectangle")
        for r in rects:
            if not isinstance(r, Rect):
                raise GeometryError(f"not a Rect: {r!r}")
        object.__setattr__(self, "rects", rects)

    def __iter__(self) -> Iterator[Rect]:
        return iter(self.rects)

    def union(self, other: "RegionSet") -> "RegionSet":
        return RegionSet(self.rects + other.rects)

    def contains(self, p: Point) -> bool:
        return any(r.contains(p) for r in self.rects)

    def bounding_box(self) -> Rect:
        return Rect(
            min(r.t_lo for r in self.rects),
            max(r.t_hi for r in self.rects),
            min(r.x_lo for r in self.rects),
            max(r.x_hi for r in self.rects),
        )


def as_region(obj: "RegionSet | Rect | Iterable[Rect]") -> RegionSet:
    if isinstance(obj, RegionSet):
        return obj
    if isinstance(obj, Rect):
        return RegionSet([obj])
    return RegionSet(obj)


# ---------------------------------------------------------------------------
# Points
# ---------------------------------------------------------------------------

def causal_relation(p: Point, q: Point) -> CausalRelation:
    """Where ``q`` lies as seen from ``p``.

    Lightlike separation counts as causal.  The coincident case ``p == q`` is
    reported as ``Q_IN_FUTURE_OF_P`` by convention.
    """
    dt = q.t - p.t
    dx = abs(q.x - p.x)
    if dt >= dx:
        return CausalRelation.Q_IN_FUTURE_OF_P
    if -dt >= dx:
        return CausalRelation.Q_IN_PAST_OF_P
    return CausalRelation.SPACELIKE


def causally_connected(p: Point, q: Point) -> bool:
    return causal_relation(p, q) is not CausalRelation.SPACELIKE


# ---------------------------------------------------------------------------
# Rectangles
# ---------------------------------------------------------------------------

def _dt_range(a: Rect, b: Rect) -> tuple[float, float]:
    """Range of t_b - t_a over a in A, b in B."""
    return b.t_lo - a.t_hi, b.t_hi - a.t_lo


def _abs_dx_range(a: Rect, b: Rect) -> tuple[float, float]:
    lo, hi = b.x_lo - a.x_hi, b.x_hi - a.x_lo
    min_abs = 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi))
    return min_abs, max(abs(lo), abs(hi))


def _rect_spacelike(a: Rect, b: Rect) -> bool:
    dt_lo, dt_hi = _dt_range(a, b)
    dx_min, _ = _abs_dx_range(a, b)
    return max(abs(dt_lo), abs(dt_hi)) < dx_min


def _rect_before(a: Rect, b: Rect) -> bool:
    """Every point of ``b`` lies in the closed causal future of every point of ``a``."""
    dt_lo, _ = _dt_range(a, b)
    _, dx_max = _abs_dx_range(a, b)
    return dt_lo >= dx_max


def _rect_meets_future(a: Rect, b: Rect) -> bool:
    """Some point of ``a`` lies in the closed causal future of some point of ``b``."""
    _, dt_hi = _dt_range(b, a)
    dx_min, _ = _abs_dx_range(b, a)
    return dt_hi >= dx_min


def region_relation(a: RegionSet | Rect, b: RegionSet | Rect) -> RegionRelation:
    """Classify two regions by the causal relation of all their point pairs."""
    a, b = as_region(a), as_region(b)
    pairs = list(itertools.product(a.rects, b.rects))
    if all(_rect_spacelike(ra, rb) for ra, rb in pairs):
        return RegionRelation.STRICTLY_SPACELIKE
    if all(_rect_before(ra, rb) for ra, rb in pairs):
        return RegionRelation.TOTALLY_TIMELIKE_A_BEFORE_B
    if all(_rect_before(rb, ra) for ra, rb in pairs):
        return RegionRelation.TOTALLY_TIMELIKE_B_BEFORE_A
    return RegionRelation.CAUSALLY_CONNECTED


def strictly_spacelike(a: RegionSet | Rect, b: RegionSet | Rect) -> bool:
    return region_relation(a, b) is RegionRelation.STRICTLY_SPACELIKE


def meets_causal_future(a: RegionSet | Rect, b: RegionSet | Rect) -> bool:
    """True when ``a`` intersects the closed causal future J+(b)."""
    a, b = as_region(a), as_region(b)
    return any(_rect_meets_future(ra, rb) for ra in a.rects for rb in b.rects)


def meets_causal_past(a: RegionSet | Rect, b: RegionSet | Rect) -> bool:
    """True when ``a`` intersects the closed causal past J-(b)."""
    return meets_causal_future(b, a)


def in_causal_complement_in(a: RegionSet | Rect, b: RegionSet | Rect) -> bool:
    """True when ``a`` lies in ``b_in``, the complement of J+(b)."""
    return not meets_causal_future(a, b)


# ---------------------------------------------------------------------------
# Causal past of a region, exact for unions of rectangles
# ---------------------------------------------------------------------------

def _past_roof(region: RegionSet, x: float) -> float:
    """Latest time t such that (t, x) lies in J-(region)."""
    best = -math.inf
    for r in region.rects:
        d = max(r.x_lo - x, 0.0, x - r.x_hi)
        best = max(best, r.t_hi - d)
    return best


def _future_floor(region: RegionSet, x: float) -> float:
    best = math.inf
    for r in region.rects:
        d = max(r.x_lo - x, 0.0, x - r.x_hi)
        best = min(best, r.t_lo + d)
    return best


def _envelope_breakpoints(region: RegionSet, x_lo: float, x_hi: float, past: bool) -> list[float]:
    # Each rectangle contributes a tent (past) or a trough (future) built from
    # lines of slope +1, 0 and -1.  The envelope is piecewise linear, so its
    # extremes over [x_lo, x_hi] sit at endpoints or crossings of such lines.
    up, flat, down = [], [], []
    for r in region.rects:
        if past:
            up.append(r.t_hi - r.x_lo)      # t = c + x
            flat.append(r.t_hi)
            down.append(r.t_hi + r.x_hi)    # t = c - x
        else:
            up.append(r.t_lo - r.x_hi)
            flat.append(r.t_lo)
            down.append(r.t_lo + r.x_lo)
    cand = {x_lo, x_hi}
    for r in region.rects:
        cand.update((r.x_lo, r.x_hi))
    for c in up:
        cand.update(h - c for h in flat)
        cand.update(0.5 * (d - c) for d in down)
    for d in down:
        cand.update(d - h for h in flat)
    return sorted(c for c in cand if x_lo <= c <= x_hi)


def outside_causal_past(a: RegionSet | Rect, b: RegionSet | Rect) -> Point | None:
    """Return a point of ``a`` outside the closed causal past of ``b``, or None.

    The returned point is a witness: it lies in ``a`` and no point of ``b`` is
    in its closed causal future.
    """
    a, b = as_region(a), as_region(b)
    for r in a.rects:
        for x in _envelope_breakpoints(b, r.x_lo, r.x_hi, past=True):
            if r.t_hi > _past_roof(b, x):
                return Point(r.t_hi, x)
    return None


def outside_causal_future(a: RegionSet | Rect, b: RegionSet | Rect) -> Point | None:
    a, b = as_region(a), as_region(b)
    for r in a.rects:
        for x in _envelope_breakpoints(b, r.x_lo, r.x_hi, past=False):
            if r.t_lo < _future_floor(b, x):
                return Point(r.t_lo, x)
    return None


def contained_in_causal_past(a: RegionSet | Rect, b: RegionSet | Rect) -> bool:
    return outside_causal_past(a, b) is None


def causal_shadow(
    region: RegionSet | Rect,
    direction: str,
    clip: Rect,
    resolution: float | None = None,
) -> RegionSet:
    """Rectangle cover of J+(region) or J-(region) intersected with ``clip``.

    The clip window is cut into time slabs of height ``resolution`` (default:
    a twentieth of the clip duration).  Within a slab, each rectangle's cone is
    covered by its widest cross-section, so the cover always contains the
    exact shadow and tightens as the resolution shrinks.
    """
    region = as_region(region)
    if direction not in ("future", "past"):
        raise GeometryError(f"direction must be 'future' or 'past', got {direction!r}")
    duration = clip.t_hi - clip.t_lo
    if resolution is None:
        resolution = duration / 20.0
    if not (resolution > 0.0):
        raise GeometryError("shadow resolution must be positive")
    n = max(1, math.ceil(duration / resolution - 1e-12))
    edges = [clip.t_lo + duration * i / n for i in range(n + 1)]
    out = []
    for r in region.rects:
        for s0, s1 in zip(edges[:-1], edges[1:]):
            if direction == "future":
                if s1 < r.t_lo:
                    continue
                t0, t1 = max(s0, r.t_lo), s1
                spread = t1 - r.t_lo
            else:
                if s0 > r.t_hi:
                    continue
                t0, t1 = s0, min(s1, r.t_hi)
                spread = r.t_hi - t0
            x0 = max(r.x_lo - spread, clip.x_lo)
            x1 = min(r.x_hi + spread, clip.x_hi)
            if t0 < t1 and x0 < x1:
                out.append(Rect(t0, t1, x0, x1))
    if not out:
        raise GeometryError("causal shadow does not meet the clip window")
    return RegionSet(out)
