"""Periodic orbit of an isolated link from its inflow and capacity.

The last zero-to-positive transition of the periodic queue is found from the
below/above-capacity interval structure without iterating; the queue at the
start of the period follows by integrating from that instant to the period
end, and one period of exact integration then yields the whole orbit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .model import Network
from .pwc import FLOW_EPS, PiecewiseLinear, PwcFunction, compare_sets, integrate
from . import sim as _sim

INTEGRAL_TOL = 1e-9
PERIODICITY_TOL = 1e-9


class UnstableLinkError(ValueError):
    """Average inflow is not below average capacity."""


class PeriodicityError(RuntimeError):
    """One period of integration from the computed start did not close up."""


@dataclass(frozen=True)
class TransitionAnalysis:
    below: tuple            # closed intervals where y < c
    above: tuple            # closed intervals where y > c
    w_alpha: tuple          # selected left endpoints of ``above`` intervals
    w_alpha_index: tuple    # their 0-based positions in ``above``
    alpha_last: Optional[float]
    x0: float

    @property
    def m(self) -> int:
        return len(self.w_alpha)


@dataclass(frozen=True)
class PeriodicOrbit:
    x_star: PiecewiseLinear
    z_star: PwcFunction
    alphas: tuple
    gammas: tuple
    analysis: TransitionAnalysis

    @property
    def period(self):
        return self.z_star.domain_len

    def z_mean(self) -> float:
        return self.z_star.mean()


def _check_pair(y: PwcFunction, c: PwcFunction):
    if not (y.periodic and c.periodic) or y.domain_len != c.domain_len or y.start != c.start:
        raise ValueError("inflow and capacity must be periodic with a common period")


def analyze(y: PwcFunction, c: PwcFunction) -> TransitionAnalysis:
    _check_pair(y, c)
    if not y.mean() < c.mean():
        raise UnstableLinkError(f"mean inflow {y.mean():.6g} >= mean capacity {c.mean():.6g}")
    below, above = compare_sets(y, c, FLOW_EPS)
    if not above:
        return TransitionAnalysis(tuple(below), (), (), (), None, 0.0)

    t0 = y.start
    T = y.domain_len

    def net_gain(a, b):  # Y(a, b) - C(a, b)
        return integrate(y, a, b) - integrate(c, a, b)

    r = [0]
    while True:
        prev_lo = above[r[-1]][0]
        found = None
        for ind in range(r[-1] + 1, len(above)):
            lo, hi = above[ind - 1][0], above[ind][0]
            for _, b_hi in below:
                # open on the left: an interval ending at w_lo^(ind-1) precedes that
                # positive set rather than separating it from the next one
                if not lo < b_hi <= hi:
                    continue
                diff = net_gain(prev_lo, b_hi)
                if (b_hi < hi and diff <= INTEGRAL_TOL) or (b_hi == hi and diff < -INTEGRAL_TOL):
                    found = ind
                    break
            if found is not None:
                break
        if found is None:
            break
        r.append(found)
    alpha_last = above[r[-1]][0]
    x0 = max(0.0, net_gain(alpha_last, t0 + T))
    return TransitionAnalysis(tuple(below), tuple(above), tuple(above[k][0] for k in r),
                              tuple(r), alpha_last, x0)


def integrate_link(y: PwcFunction, c: PwcFunction, x0: float):
    """Exact single-queue integration over one period from ``x(start) = x0``.

    Returns knot times, knot values, the outflow segments and the observed
    zero-to-positive (alpha) and positive-to-zero (gamma) instants.
    """
    tpu = y.ticks_per_unit
    t0, T = y.start, y.domain_len
    pts = sorted(set(y.breakpoints) | set(c.breakpoints))
    times, xs = [t0], [float(x0)]
    zb, zv = [], []
    alphas, gammas = [], []
    x = float(x0)

    def put_z(t, v):
        if zb and zb[-1] == t:
            zv[-1] = v
        elif not zv or v != zv[-1]:
            zb.append(t)
            zv.append(v)

    for k, a in enumerate(pts):
        b = pts[k + 1] if k + 1 < len(pts) else t0 + T
        mid = a + (b - a) / 2
        yv, cv = y(mid), c(mid)
        if x > 0:
            s = yv - cv
            hit = a + x / (-s) * tpu if s < 0 else math.inf
            if hit <= b:
                put_z(a, cv)
                times.append(hit)
                xs.append(0.0)
                gammas.append(hit)
                x = 0.0
                if hit < b:
                    put_z(hit, min(yv, cv))
                    times.append(b)
                    xs.append(0.0)
            else:
                put_z(a, cv)
                x = x + s * (b - a) / tpu
                times.append(b)
                xs.append(x)
        else:
            if yv > cv:
                alphas.append(a)
                put_z(a, cv)
                x = (yv - cv) * (b - a) / tpu
            else:
                put_z(a, yv)
            times.append(b)
            xs.append(x)
    kt, kx = [times[0]], [xs[0]]
    for t, v in zip(times[1:], xs[1:]):
        if t == kt[-1]:
            kx[-1] = v
        else:
            kt.append(t)
            kx.append(v)
    _sim._notify(_sim.WindowStats(1, windows=len(pts), max_changes=min(1, len(gammas))))
    return kt, kx, (zb, zv), alphas, gammas


def orbit_from(y: PwcFunction, c: PwcFunction) -> PeriodicOrbit:
    ana = analyze(y, c)
    kt, kx, (zb, zv), alphas, gammas = integrate_link(y, c, ana.x0)
    if abs(kx[-1] - ana.x0) > PERIODICITY_TOL:
        raise PeriodicityError(f"queue ends the period at {kx[-1]!r}, started at {ana.x0!r}")
    kx[-1] = kx[0]
    z = PwcFunction.from_segments(zb, zv, y.domain_len, True, y.ticks_per_unit)
    return PeriodicOrbit(PiecewiseLinear(tuple(kt), tuple(kx)), z, tuple(alphas),
                         tuple(gammas), ana)


def orbit(net_of_one: Network, y: Optional[PwcFunction] = None) -> PeriodicOrbit:
    """Orbit of the single link in ``net_of_one``; ``y`` overrides its inflow."""
    if net_of_one.n_links != 1:
        raise ValueError("orbit expects a one-link network")
    return orbit_from(y if y is not None else net_of_one.inflows[0], net_of_one.capacities[0])


# -- export ------------------------------------------------------------------

def write_orbit_csv(orb: PeriodicOrbit, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "x_star", "z_star"])
        pts = sorted(set(orb.x_star.times) | set(orb.z_star.breakpoints))
        for t in pts:
            zt = orb.z_star(t) if t < orb.z_star.end else orb.z_star(orb.z_star.start)
            w.writerow([repr(float(t)), repr(float(orb.x_star(t))), repr(float(zt))])
    side = {
        "alphas_ms": list(orb.alphas),
        "gammas_ms": list(orb.gammas),
        "alpha_last_ms": orb.analysis.alpha_last,
        "x0": orb.analysis.x0,
        "w_alpha_ms": list(orb.analysis.w_alpha),
        "period_ms": orb.period,
    }
    path.with_suffix(".alphas.json").write_text(json.dumps(side, indent=1))


def read_orbit_csv(path, period=None, ticks_per_unit: int = 1000):
    """Return ``(x_star, z_star)`` from an orbit CSV."""
    ts, xs, zs = [], [], []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            ts.append(float(r["t_ms"]))
            xs.append(float(r["x_star"]))
            zs.append(float(r["z_star"]))
    T = period if period is not None else ts[-1] - ts[0]
    x = PiecewiseLinear(tuple(ts), tuple(xs))
    bps = [t for t in ts if t < ts[0] + T]
    vals = zs[: len(bps)]
    z = PwcFunction.from_segments(bps, vals, T, True, ticks_per_unit)
    return x, z
