"""Stability margin, state distances, contraction checks and RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Network, average_rates
from .pwc import (PiecewiseLinear, PwcFunction, abs_diff_integral, max_violation,
                  pl_max_violation, pl_sq_diff_integral)

CONTRACTION_TOL = 1e-9
SWITCH_TIME_TOL = 1e-6  # ticks; outflow jumps this close together are one switch


@dataclass(frozen=True)
class StabilityReport:
    margin: float
    stable: bool
    slack: np.ndarray

    def as_dict(self) -> dict:
        return {"margin": self.margin, "stable": self.stable, "slack": self.slack.tolist()}


def stability(net: Network) -> StabilityReport:
    """Margin ``min_i [(I - R^T) c_bar - lambda_bar]_i``; stable iff positive."""
    lam, cap = average_rates(net)
    slack = cap - net.routing_matrix().T @ cap - lam
    margin = float(slack.min()) if len(slack) else math.inf
    return StabilityReport(margin, margin > 0, slack)


@dataclass(frozen=True)
class DistanceSample:
    t: float
    state_gap: float
    history_gap: float

    @property
    def total(self) -> float:
        return self.state_gap + self.history_gap


def l1_distance(net: Network, a, b) -> DistanceSample:
    """``sum|x - x'|`` and the routed l1 distance between departure histories."""
    if abs(a.t - b.t) > 1e-9:
        raise ValueError(f"states at different times ({a.t} vs {b.t})")
    sg = float(np.abs(np.asarray(a.x) - np.asarray(b.x)).sum())
    hg = 0.0
    for e in net.routing:
        if e.delay > 0:
            hg += e.ratio * abs_diff_integral(a.beta[e.src], b.beta[e.src],
                                              a.t - e.delay, a.t)
    return DistanceSample(a.t, sg, hg)


@dataclass
class ContractionReport:
    samples: list
    violations: list = field(default_factory=list)  # (cycle index, increase)

    @property
    def initial(self) -> float:
        return self.samples[0].total

    @property
    def final(self) -> float:
        return self.samples[-1].total


def check_contraction(net: Network, init_a, init_b, cycles: int,
                      tol: float = CONTRACTION_TOL) -> ContractionReport:
    """Co-simulate two runs and sample their combined gap at every cycle boundary."""
    from .sim import Simulator

    if abs(init_a.t - init_b.t) > 1e-9:
        raise ValueError("initial states at different times")
    sa = Simulator(net, init_a, record=False)
    sb = Simulator(net, init_b, record=False)
    samples = [l1_distance(net, init_a, init_b)]
    rep = ContractionReport(samples)
    t0 = init_a.t
    for k in range(1, cycles + 1):
        t = math.floor(t0 / net.cycle) * net.cycle + k * net.cycle
        if t <= t0:
            continue
        sa.run_until(t)
        sb.run_until(t)
        s = l1_distance(net, sa.state(), sb.state())
        if s.total > samples[-1].total + tol:
            rep.violations.append((k, s.total - samples[-1].total))
        samples.append(s)
    sa.trajectory()
    sb.trajectory()
    return rep


def _curves(obj) -> list:
    """Per-link piecewise-linear queue curves from a trajectory, orbit(s) or curve list."""
    from .sim import Trajectory
    from .steady_link import PeriodicOrbit
    from .steady_net import NetworkSteadyState

    if isinstance(obj, Trajectory):
        return [obj.x_curve(i) for i in range(obj.n_links)]
    if isinstance(obj, NetworkSteadyState):
        return [o.x_star for o in obj.orbits]
    if isinstance(obj, PeriodicOrbit):
        return [obj.x_star]
    out = []
    for item in obj:
        if isinstance(item, PeriodicOrbit):
            out.append(item.x_star)
        elif isinstance(item, PiecewiseLinear):
            out.append(item)
        elif isinstance(item, tuple):
            out.append(item[0])
        else:
            raise TypeError(f"cannot read a queue curve from {type(item).__name__}")
    return out


def rmse(a, b, period, start_a=None, start_b=None) -> np.ndarray:
    """Per-link ``sqrt(integral_0^T (x_a - x_b)^2 dt / T)`` over aligned windows."""
    ca, cb = _curves(a), _curves(b)
    if len(ca) != len(cb):
        raise ValueError("different numbers of links")
    out = []
    for xa, xb in zip(ca, cb):
        sa = xa.start if start_a is None else start_a
        sb = xb.start if start_b is None else start_b
        if sa + period > xa.end + 1e-6 or sb + period > xb.end + 1e-6:
            raise ValueError("curve shorter than the comparison window")
        wa = xa.window(sa, min(sa + period, xa.end), 0.0)
        wb = xb.window(sb, min(sb + period, xb.end), 0.0)
        T = min(wa.end, wb.end)
        out.append(math.sqrt(max(pl_sq_diff_integral(wa, wb, 0.0, T), 0.0) / period))
    return np.array(out)


def rmse_pwc(fa: Sequence[PwcFunction], fb: Sequence[PwcFunction], a, b) -> np.ndarray:
    """Per-link RMSE of piecewise-constant outflows over ``[a, b]``."""
    from .pwc import sq_diff_integral

    L = (b - a) / fa[0].ticks_per_unit
    return np.array([math.sqrt(sq_diff_integral(f, g, a, b) / L) for f, g in zip(fa, fb)])


def curve_dominance(lo: PiecewiseLinear, hi: PiecewiseLinear, a, b) -> float:
    """Largest ``lo - hi`` on ``[a, b]`` (non-positive when ``lo <= hi``)."""
    return pl_max_violation(lo, hi, a, b)


def pwc_dominance(lo: PwcFunction, hi: PwcFunction, a, b,
                  time_tol: float = SWITCH_TIME_TOL) -> float:
    """Largest ``lo - hi`` on ``[a, b)`` ignoring slivers shorter than ``time_tol``."""
    return max_violation(lo, hi, a, b, time_tol)


def queue_bound(net: Network, x0) -> np.ndarray:
    """Explicit per-link queue bound for a stable network.

    A queue above ``N T c_bar_i`` with ``N > d / (T margin)`` must shrink over
    the next ``N`` cycles, where ``d`` bounds the in-transit discrepancy
    ``sum_j R_ji delta_ji c_j^max``. Adding the largest possible growth over
    ``N + 1`` cycles gives a ceiling that no trajectory can cross.
    """
    rep = stability(net)
    if not rep.stable:
        raise ValueError("bound requires a positive stability margin")
    _, cap = average_rates(net)
    tpu = net.ticks_per_unit
    T = net.cycle / tpu
    cmax = np.array([f.max() for f in net.capacities])
    d = np.zeros(net.n_links)
    growth = np.array([f.max() for f in net.inflows])
    for e in net.routing:
        d[e.dst] += 2 * e.ratio * (e.delay / tpu) * cmax[e.src]
        growth[e.dst] += e.ratio * cmax[e.src]
    N = math.floor(float(d.max(initial=0.0)) / (T * rep.margin)) + 1
    base = np.maximum(np.asarray(x0, dtype=float), N * T * cap)
    return base + (N + 1) * T * growth


@dataclass
class RmseStudy:
    table: np.ndarray          # rows = iterations, columns = links
    sim_cycles: int            # cycles simulated before the reference cycle
    settled: bool              # cycle-to-cycle change fell below the tolerance
    steady: object             # NetworkSteadyState from the iteration

    def non_increasing(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.diff(self.table, axis=0) <= tol))

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "link", "rmse"])
            for k, row in enumerate(self.table):
                for i, v in enumerate(row):
                    w.writerow([k + 1, i, repr(float(v))])


def settle(net: Network, init, max_cycles: int = 2000, tol: float = 1e-10):
    """Simulate cycle by cycle until the boundary queues repeat within ``tol``.

    Returns ``(state at the last boundary, cycles run, settled)``.
    """
    from .sim import Simulator

    s = Simulator(net, init, record=False)
    prev = np.asarray(init.x, dtype=float)
    t = init.t
    calm = 0
    for k in range(1, max_cycles + 1):
        t = init.t + k * net.cycle
        s.run_until(t)
        cur = s.x.copy()
        calm = calm + 1 if np.max(np.abs(cur - prev), initial=0.0) <= tol else 0
        prev = cur
        if calm >= 3:
            return s.state(), k, True
    return s.state(), max_cycles, False


def rmse_study(net: Network, x_init: float = 10.0, eps: float = 1e-9, max_iter: int = 500,
               max_cycles: int = 2000, tol: float = 1e-10) -> RmseStudy:
    """RMSE between each steady-state iterate and a long simulation's last cycle."""
    from .sim import NetState, Simulator
    from .steady_net import solve_steady

    state, cycles, settled = settle(net, NetState.cold(net, x_init, 0), max_cycles, tol)
    ref = Simulator(net, state)
    ref.run_until(state.t + net.cycle)
    traj = ref.trajectory()
    steady, _ = solve_steady(net, eps, max_iter, keep_iterates=True)
    table = np.array([rmse(traj, list(its), net.cycle, start_a=state.t, start_b=0)
                      for its in steady.iterates])
    return RmseStudy(table, cycles, settled, steady)
