"""Independent references for tests: LP solver, Euler integrator, random stable networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CapacityProfile, Network, RoutingEntry
from .outflow import lp_oracle as lp_reference
from .pwc import PwcFunction
from .sim import euler_oracle

__all__ = ["RandomNetSpec", "gen_stable_net", "lp_reference", "euler_oracle",
           "random_query"]

DELAY_MODES = ("all-zero", "mixed", "all-positive")
GRID = 10  # ticks; every generated breakpoint and delay is a multiple


@dataclass(frozen=True)
class RandomNetSpec:
    seed: int
    n_links: int = 5
    delay_mode: str = "all-zero"
    margin: float = 0.05
    cycle_ms: int = 2000
    max_row_sum: float = 0.9

    def __post_init__(self):
        if not 1 <= self.n_links <= 10:
            raise ValueError("n_links must be in 1..10")
        if self.delay_mode not in DELAY_MODES:
            raise ValueError(f"delay_mode must be one of {DELAY_MODES}")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.cycle_ms % GRID or self.cycle_ms < 20 * GRID:
            raise ValueError(f"cycle_ms must be a multiple of {GRID} and at least {20 * GRID}")


def _grid(rng, lo, hi):
    """Random multiple of GRID in [lo, hi]."""
    return int(rng.integers(lo // GRID, hi // GRID + 1)) * GRID


def _routing(rng, n, spec):
    pairs = set()
    order = rng.permutation(n)
    for k in range(1, n):  # random spanning tree with random orientation
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        pairs.add((a, b) if rng.random() < 0.5 else (b, a))
    for a in range(n):
        for b in range(n):
            if a != b and rng.random() < 1.5 / max(n, 1):
                pairs.add((a, b))
    by_src = {}
    for a, b in sorted(pairs):
        by_src.setdefault(a, []).append(b)
    T = spec.cycle_ms
    entries = []
    for a, outs in by_src.items():
        total = rng.uniform(0.3, spec.max_row_sum)
        shares = rng.dirichlet(np.ones(len(outs))) * total
        for b, r in zip(outs, shares):
            r = max(float(r), 1e-3)
            if spec.delay_mode == "all-zero":
                d = 0
            elif spec.delay_mode == "all-positive":
                d = _grid(rng, 10 * GRID, T)
            else:
                d = 0 if rng.random() < 0.5 else _grid(rng, 10 * GRID, T)
            entries.append(RoutingEntry(a, b, r, d))
    # rescale rows that crept past the cap after the 1e-3 floor
    rows = {}
    for e in entries:
        rows[e.src] = rows.get(e.src, 0.0) + e.ratio
    out = []
    for e in entries:
        s = rows[e.src]
        r = e.ratio * (spec.max_row_sum / s) if s > spec.max_row_sum else e.ratio
        out.append(RoutingEntry(e.src, e.dst, r, e.delay))
    return tuple(out)


def _inflow(rng, mean, T, tpu):
    if mean <= 0 or rng.random() < 0.5:
        return PwcFunction.constant(max(mean, 0.0), T, ticks_per_unit=tpu)
    # base level plus two pulses, with the pulses carrying part of the mass
    w1 = _grid(rng, T // 10, T // 4)
    w2 = _grid(rng, T // 10, T // 4)
    o1 = _grid(rng, 0, T // 2 - w1)
    o2 = _grid(rng, T // 2, T - w2)
    frac = rng.uniform(0.3, 0.9)
    base = mean * (1 - frac)
    h = mean * frac * T / (w1 + w2)
    bps = [0, o1, o1 + w1, o2, o2 + w2]
    vals = [base, base + h, base, base + h, base]
    keep = [(b, v) for b, v in zip(bps, vals)]
    return PwcFunction.from_segments([b for b, _ in keep], [v for _, v in keep], T, True, tpu)


def gen_stable_net(spec: RandomNetSpec, ticks_per_unit: int = 1000) -> Network:
    """Random network that passes validation with stability margin >= ``spec.margin``.

    Capacities are built backwards: pick a slack vector ``u > margin``, set
    ``c_bar = (I - R^T)^{-1} u`` and convert to rectangular greens; average
    inflows are then drawn below ``u - margin``.
    """
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_links, spec.cycle_ms
    routing = _routing(rng, n, spec) if n > 1 else ()
    R = np.zeros((n, n))
    for e in routing:
        R[e.src, e.dst] += e.ratio
    u = rng.uniform(spec.margin + 0.2, spec.margin + 1.5, size=n)
    cbar = np.linalg.solve(np.eye(n) - R.T, u)
    profiles, caps = [], []
    for i in range(n):
        g = _grid(rng, 3 * T // 10, 7 * T // 10)
        off = _grid(rng, 0, T - GRID)
        prof = CapacityProfile(float(cbar[i] * T / g), off, g, T)
        profiles.append(prof)
        caps.append(prof.to_pwc(ticks_per_unit))
    lam_bar = rng.uniform(0.2, 0.95, size=n) * (u - spec.margin)
    inflows = [_inflow(rng, float(m), T, ticks_per_unit) for m in lam_bar]
    return Network(T, tuple(inflows), tuple(caps), routing, tuple(profiles), (),
                   tuple(f"L{i}" for i in range(n)), ticks_per_unit)


def random_query(rng, net: Network):
    """Random outflow query on ``net``: zero set, effective inflows and capacities."""
    from .outflow import OutflowQuery

    n = net.n_links
    zero = frozenset(int(i) for i in np.flatnonzero(rng.random(n) < 0.7))
    lt = rng.uniform(0, 2, size=n) * (rng.random(n) < 0.8)
    c = rng.uniform(0, 3, size=n) * (rng.random(n) < 0.85)
    return OutflowQuery(zero, tuple(lt), tuple(c))
