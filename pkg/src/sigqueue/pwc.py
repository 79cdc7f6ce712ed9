"""Piecewise-constant functions of time, plus a small piecewise-linear helper.

Time is measured in ticks (by default one tick is one millisecond). Exogenous
breakpoints are integers; breakpoints produced by the simulator (queue
emptying instants) may be fractional ticks. Function values are rates per
*unit* time, where one unit is ``ticks_per_unit`` ticks, so integrals come out
in vehicles rather than vehicle-ticks.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

MERGE_TOL = 1e-12
FLOW_EPS = 1e-9
DEFAULT_TICKS_PER_UNIT = 1000


class DomainError(ValueError):
    """Query outside the domain of a non-periodic function, or mismatched domains."""


@dataclass(frozen=True)
class PwcFunction:
    """Right-continuous piecewise-constant function on ``[start, start + domain_len)``.

    ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``; the last
    segment runs to the end of the domain. Periodic functions repeat with
    period ``domain_len``.
    """

    breakpoints: tuple
    values: tuple
    domain_len: float
    periodic: bool = False
    ticks_per_unit: int = DEFAULT_TICKS_PER_UNIT

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values):
            raise ValueError("breakpoints and values must have equal length")
        if self.domain_len < 0:
            raise ValueError("domain_len must be non-negative")
        if self.domain_len > 0 and not self.breakpoints:
            raise ValueError("a non-empty domain needs at least one segment")
        for a, b in zip(self.breakpoints, self.breakpoints[1:]):
            if not b > a:
                raise ValueError(f"breakpoints must be strictly increasing ({a}, {b})")
        if self.breakpoints and self.breakpoints[-1] >= self.end:
            raise ValueError("last breakpoint must lie inside the domain")
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError("values must be finite")

    # -- construction -----------------------------------------------------

    @classmethod
    def constant(cls, value, domain_len, start=0, periodic=True,
                 ticks_per_unit=DEFAULT_TICKS_PER_UNIT) -> "PwcFunction":
        if domain_len == 0:
            return cls((), (), 0, periodic, ticks_per_unit)
        return cls((start,), (float(value),), domain_len, periodic, ticks_per_unit)

    @classmethod
    def from_segments(cls, breakpoints: Sequence, values: Sequence, domain_len,
                      periodic=True, ticks_per_unit=DEFAULT_TICKS_PER_UNIT) -> "PwcFunction":
        """Build and canonicalize. Zero-length segments are dropped."""
        bps, vals = [], []
        end = breakpoints[0] + domain_len if breakpoints else 0
        for k, (b, v) in enumerate(zip(breakpoints, values)):
            nxt = breakpoints[k + 1] if k + 1 < len(breakpoints) else end
            if nxt > b:
                bps.append(b)
                vals.append(float(v))
        f = cls(tuple(bps), tuple(vals), domain_len, periodic, ticks_per_unit)
        return f.canonical()

    @classmethod
    def pulse(cls, height, offset, width, period,
              ticks_per_unit=DEFAULT_TICKS_PER_UNIT) -> "PwcFunction":
        """``height`` on ``[offset, offset + width)`` mod ``period``, zero elsewhere."""
        if not 0 <= width <= period:
            raise ValueError("pulse width must lie in [0, period]")
        if width == period:
            return cls.constant(height, period, ticks_per_unit=ticks_per_unit)
        if width == 0:
            return cls.constant(0.0, period, ticks_per_unit=ticks_per_unit)
        on = offset % period
        off = (offset + width) % period
        if on < off:
            segs = [(0, 0.0), (on, height), (off, 0.0)]
        else:
            segs = [(0, height), (off, 0.0), (on, height)]
        segs = [(b, v) for b, v in segs if 0 <= b < period]
        return cls.from_segments([b for b, _ in segs], [v for _, v in segs], period,
                                 True, ticks_per_unit)

    # -- basic queries ----------------------------------------------------

    @property
    def start(self):
        return self.breakpoints[0] if self.breakpoints else 0

    @property
    def end(self):
        return self.start + self.domain_len

    def _wrap(self, t):
        if not self.periodic:
            return t
        u = self.start + (t - self.start) % self.domain_len
        if u >= self.end:  # float mod can land exactly on the period
            u = self.start
        return u

    def __call__(self, t) -> float:
        if not self.breakpoints:
            raise DomainError("evaluation of an empty function")
        u = self._wrap(t)
        if not self.periodic and not (self.start <= u < self.end):
            raise DomainError(f"t={t} outside [{self.start}, {self.end})")
        k = bisect.bisect_right(self.breakpoints, u) - 1
        return self.values[k]

    def segments(self):
        """Yield ``(a, b, value)`` for each segment of one domain length."""
        bps = self.breakpoints
        for k, v in enumerate(self.values):
            b = bps[k + 1] if k + 1 < len(bps) else self.end
            yield bps[k], b, v

    def next_breakpoint(self, t):
        """Smallest breakpoint time strictly greater than ``t`` (periodic-aware)."""
        if not self.breakpoints:
            return math.inf
        if not self.periodic:
            k = bisect.bisect_right(self.breakpoints, t)
            if k < len(self.breakpoints):
                return self.breakpoints[k]
            return self.end if t < self.end else math.inf
        T = self.domain_len
        base = self.start + math.floor((t - self.start) / T) * T
        k = bisect.bisect_right(self.breakpoints, self.start + (t - base))
        # rounding in base + offset can land on t itself; step until strictly later
        while True:
            if k >= len(self.breakpoints):
                base, k = base + T, 0
            cand = base + (self.breakpoints[k] - self.start)
            if cand > t:
                return cand
            k += 1

    def total(self) -> float:
        """Integral over one domain length."""
        return sum((b - a) * v for a, b, v in self.segments()) / self.ticks_per_unit

    def mean(self) -> float:
        return self.total() * self.ticks_per_unit / self.domain_len

    def max(self) -> float:
        return max(self.values) if self.values else 0.0

    def _primitive(self, u):
        """Integral from ``start`` to ``u`` for ``u`` inside one domain (in value-ticks)."""
        acc = 0.0
        for a, b, v in self.segments():
            if u <= a:
                break
            acc += (min(u, b) - a) * v
        return acc

    def integrate(self, s1, s2) -> float:
        return integrate(self, s1, s2)

    def canonical(self) -> "PwcFunction":
        """Merge adjacent segments whose values agree within ``MERGE_TOL``.

        For periodic functions the first segment is kept at ``start`` even when
        it matches the last one, so the domain anchor never moves.
        """
        if not self.values:
            return self
        bps, vals = [self.breakpoints[0]], [self.values[0]]
        for b, v in zip(self.breakpoints[1:], self.values[1:]):
            if abs(v - vals[-1]) <= MERGE_TOL:
                continue
            bps.append(b)
            vals.append(v)
        if tuple(bps) == self.breakpoints:
            return self
        return PwcFunction(tuple(bps), tuple(vals), self.domain_len, self.periodic,
                           self.ticks_per_unit)

    def scaled(self, w) -> "PwcFunction":
        return PwcFunction(self.breakpoints, tuple(w * v for v in self.values),
                           self.domain_len, self.periodic, self.ticks_per_unit).canonical()

    def restrict(self, a, b) -> "PwcFunction":
        """Non-periodic copy on ``[a, b)``; periodic functions are unrolled."""
        if b < a:
            raise DomainError("restrict needs a <= b")
        if b == a:
            return PwcFunction((), (), 0, False, self.ticks_per_unit)
        if not self.periodic and (a < self.start or b > self.end):
            raise DomainError(f"[{a}, {b}) outside [{self.start}, {self.end})")
        pts = [a] + sorted(_bps_in(self, a, b))
        return PwcFunction.from_segments(pts, segment_values(self, pts, b), b - a, False,
                                         self.ticks_per_unit)


def segment_values(f: PwcFunction, pts: Sequence, end) -> list:
    """Value of ``f`` on each ``[pts[k], pts[k+1])`` (last one up to ``end``).

    Evaluated at segment midpoints, so rounding in the breakpoints never
    selects the neighbouring segment.
    """
    out = []
    for k, a in enumerate(pts):
        b = pts[k + 1] if k + 1 < len(pts) else end
        out.append(f(a + (b - a) / 2) if b > a else f(a))
    return out


def _same_domain(fs: Sequence[PwcFunction]):
    f0 = fs[0]
    for f in fs[1:]:
        if (f.periodic != f0.periodic or f.domain_len != f0.domain_len
                or f.start != f0.start or f.ticks_per_unit != f0.ticks_per_unit):
            raise DomainError("functions do not share a domain")


def integrate(f: PwcFunction, s1, s2) -> float:
    """Exact integral of ``f`` over ``[s1, s2]`` in vehicles."""
    if s2 < s1:
        raise DomainError("integrate needs s1 <= s2")
    if s1 == s2:
        return 0.0
    if not f.periodic:
        if s1 < f.start or s2 > f.end:
            raise DomainError(f"[{s1}, {s2}] outside [{f.start}, {f.end}]")
        return (f._primitive(s2) - f._primitive(s1)) / f.ticks_per_unit
    T = f.domain_len
    full = T * sum(v * (b - a) for a, b, v in f.segments()) / T

    def prim(s):
        k = math.floor((s - f.start) / T)
        u = s - f.start - k * T
        return k * full + f._primitive(f.start + u)

    return (prim(s2) - prim(s1)) / f.ticks_per_unit


def shift_periodic(f: PwcFunction, delta) -> PwcFunction:
    """``g(t) = f(t - delta)`` for a periodic ``f``."""
    if not f.periodic:
        raise DomainError("shift_periodic needs a periodic function")
    T = f.domain_len
    d = delta % T
    if d == 0 or not f.breakpoints:
        return f
    pts = {f.start}
    for b in f.breakpoints:
        u = f.start + (b - f.start + d) % T
        if u >= f.end - 1e-9 * max(1.0, abs(T)):
            u = f.start
        pts.add(u)
    bps = sorted(pts)
    # midpoint of each shifted segment, mapped back into f's own period
    vals = [f(m - d) for m in _midpoints(bps, f.end)]
    return PwcFunction.from_segments(bps, vals, T, True, f.ticks_per_unit)


def _midpoints(pts, end):
    return [a + ((pts[k + 1] if k + 1 < len(pts) else end) - a) / 2 for k, a in enumerate(pts)]


def combine(terms: Iterable[tuple]) -> PwcFunction:
    """Pointwise weighted sum ``sum(w * f)`` over merged breakpoints."""
    terms = list(terms)
    if not terms:
        raise ValueError("combine needs at least one term")
    fs = [f for _, f in terms]
    _same_domain(fs)
    f0 = fs[0]
    if f0.domain_len == 0:
        return f0
    bps = sorted({b for f in fs for b in f.breakpoints})
    mids = _midpoints(bps, f0.end)
    vals = [sum(w * f(m) for w, f in terms) for m in mids]
    return PwcFunction.from_segments(bps, vals, f0.domain_len, f0.periodic,
                                     f0.ticks_per_unit)


def compare_sets(y: PwcFunction, c: PwcFunction, eps: float = FLOW_EPS):
    """Closed intervals where ``y < c - eps`` (first list) and ``y > c + eps`` (second).

    Intervals are maximal within one period ``[start, start + T]`` and ordered by
    left endpoint; runs are not joined across the period boundary.
    """
    if not (y.periodic and c.periodic):
        raise DomainError("compare_sets needs periodic functions")
    _same_domain([y, c])
    bps = sorted(set(y.breakpoints) | set(c.breakpoints))
    end = y.end
    below, above = [], []
    cur_kind, cur_lo = None, None
    for b, m in zip(bps, _midpoints(bps, end)):
        d = y(m) - c(m)
        kind = "B" if d < -eps else ("W" if d > eps else None)
        if kind != cur_kind:
            if cur_kind is not None:
                (below if cur_kind == "B" else above).append((cur_lo, b))
            cur_kind, cur_lo = kind, b
    if cur_kind is not None:
        (below if cur_kind == "B" else above).append((cur_lo, end))
    return below, above


def max_violation(f: PwcFunction, g: PwcFunction, a, b, time_tol: float = 0.0) -> float:
    """Largest ``f - g`` over ``[a, b)``, ignoring segments shorter than ``time_tol``."""
    pts = sorted({a} | _bps_in(f, a, b) | _bps_in(g, a, b))
    worst = -math.inf
    for k, t in enumerate(pts):
        nxt = pts[k + 1] if k + 1 < len(pts) else b
        if nxt - t <= time_tol:
            continue
        m = t + (nxt - t) / 2
        worst = max(worst, f(m) - g(m))
    return worst


def _bps_in(f: PwcFunction, a, b) -> set:
    out = set()
    t = f.next_breakpoint(a)
    while t < b:
        out.add(t)
        t = f.next_breakpoint(t)
    return out


def abs_diff_integral(f: PwcFunction, g: PwcFunction, a, b) -> float:
    """``integral |f - g|`` over ``[a, b]`` in vehicles."""
    if b <= a:
        return 0.0
    pts = sorted({a} | _bps_in(f, a, b) | _bps_in(g, a, b))
    acc = 0.0
    for k, t in enumerate(pts):
        nxt = pts[k + 1] if k + 1 < len(pts) else b
        m = t + (nxt - t) / 2
        acc += abs(f(m) - g(m)) * (nxt - t)
    return acc / f.ticks_per_unit


def sq_diff_integral(f: PwcFunction, g: PwcFunction, a, b) -> float:
    """``integral (f - g)^2`` over ``[a, b]``, time in units."""
    if b <= a:
        return 0.0
    pts = sorted({a} | _bps_in(f, a, b) | _bps_in(g, a, b))
    acc = 0.0
    for k, t in enumerate(pts):
        nxt = pts[k + 1] if k + 1 < len(pts) else b
        m = t + (nxt - t) / 2
        acc += (f(m) - g(m)) ** 2 * (nxt - t)
    return acc / f.ticks_per_unit


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear curve through ``(times[k], values[k])``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("need matching, non-empty times and values")
        for a, b in zip(self.times, self.times[1:]):
            if b < a:
                raise ValueError("times must be non-decreasing")

    @property
    def start(self):
        return self.times[0]

    @property
    def end(self):
        return self.times[-1]

    def __call__(self, t) -> float:
        ts = self.times
        if t < ts[0] or t > ts[-1]:
            raise DomainError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        k = bisect.bisect_right(ts, t) - 1
        if k >= len(ts) - 1:
            return self.values[-1]
        t0, t1 = ts[k], ts[k + 1]
        if t1 == t0:
            return self.values[k + 1]
        w = (t - t0) / (t1 - t0)
        return self.values[k] + w * (self.values[k + 1] - self.values[k])

    def window(self, a, b, rebase=0) -> "PiecewiseLinear":
        """Restriction to ``[a, b]`` with times shifted by ``rebase - a``."""
        if a < self.start or b > self.end or b < a:
            raise DomainError(f"[{a}, {b}] outside [{self.start}, {self.end}]")
        inner = [(t, v) for t, v in zip(self.times, self.values) if a < t < b]
        pts = [(a, self(a))] + inner + [(b, self(b))]
        shift = rebase - a
        return PiecewiseLinear(tuple(t + shift for t, _ in pts), tuple(v for _, v in pts))

    def sup(self) -> float:
        return max(self.values)

    def inf(self) -> float:
        return min(self.values)


def _pl_points(f: PiecewiseLinear, g: PiecewiseLinear, a, b):
    return sorted({a, b} | {t for t in f.times if a < t < b} | {t for t in g.times if a < t < b})


def pl_sq_diff_integral(f: PiecewiseLinear, g: PiecewiseLinear, a, b) -> float:
    """Exact ``integral (f - g)^2`` over ``[a, b]`` (time in the curves' own units)."""
    pts = _pl_points(f, g, a, b)
    acc = 0.0
    for t0, t1 in zip(pts, pts[1:]):
        d0 = _right_value(f, t0) - _right_value(g, t0)
        d1 = _left_value(f, t1) - _left_value(g, t1)
        acc += (t1 - t0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0
    return acc


def pl_max_violation(f: PiecewiseLinear, g: PiecewiseLinear, a, b) -> float:
    """Largest ``f - g`` over ``[a, b]``; exact because the difference is linear between nodes."""
    pts = _pl_points(f, g, a, b)
    worst = -math.inf
    for t in pts:
        worst = max(worst, _left_value(f, t) - _left_value(g, t),
                    _right_value(f, t) - _right_value(g, t))
    return worst


def pl_sup_distance(f: PiecewiseLinear, g: PiecewiseLinear, a, b) -> float:
    return max(pl_max_violation(f, g, a, b), pl_max_violation(g, f, a, b))


def _left_value(f: PiecewiseLinear, t):
    # curves are continuous; repeated times only arise from snapping and carry equal values
    k = bisect.bisect_left(f.times, t)
    if k < len(f.times) and f.times[k] == t:
        return f.values[k]
    return f(t)


def _right_value(f: PiecewiseLinear, t):
    k = bisect.bisect_right(f.times, t) - 1
    if k >= 0 and f.times[k] == t:
        return f.values[k]
    return f(t)
