"""Network periodic orbit by monotone iteration of per-link orbits.

Start from the external inflows, compute every link's isolated periodic
orbit, route the resulting outflows (shifted by travel times) into the
downstream inflows and repeat. Period-average outflows rise towards
``(I - R^T)^{-1} lambda_bar``, which gives the stopping rule.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .model import Network, average_rates
from .pwc import PwcFunction, combine, pl_sq_diff_integral, shift_periodic
from .sim import NetState
from .steady_link import PeriodicOrbit, orbit_from, write_orbit_csv

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 500


class UnstableNetworkError(ValueError):
    pass


def route(net: Network, z: Sequence[PwcFunction]) -> list:
    """Inflow of each link given periodic link outflows ``z``."""
    if len(z) != net.n_links:
        raise ValueError("need one outflow per link")
    for f in z:
        if not f.periodic or f.domain_len != net.cycle:
            raise ValueError("outflows must be periodic with the network cycle")
    terms = [[(1.0, net.inflows[i])] for i in range(net.n_links)]
    for e in net.routing:
        terms[e.dst].append((e.ratio, shift_periodic(z[e.src], e.delay)))
    return [combine(t) for t in terms]


def target_average(net: Network) -> np.ndarray:
    """Steady period-average outflows ``(I - R^T)^{-1} lambda_bar``."""
    lam, _ = average_rates(net)
    A = np.eye(net.n_links) - net.routing_matrix().T
    try:
        zbar = np.linalg.solve(A, lam)
    except np.linalg.LinAlgError as exc:
        raise UnstableNetworkError("I - R^T is singular") from exc
    if np.max(np.abs(A @ zbar - lam), initial=0.0) > 1e-10 * max(1.0, np.abs(lam).max(initial=0)):
        raise UnstableNetworkError("I - R^T is numerically singular")
    return zbar


@dataclass
class IterationLog:
    zbar: list = field(default_factory=list)      # one array per iteration
    gap: list = field(default_factory=list)       # max_i(target_i - zbar_i)
    wall: list = field(default_factory=list)      # seconds per iteration
    rmse_vs_final: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "link", "z_bar", "gap", "rmse_vs_final"])
            for k, zb in enumerate(self.zbar):
                rm = self.rmse_vs_final[k] if k < len(self.rmse_vs_final) else None
                for i, v in enumerate(zb):
                    w.writerow([k + 1, i, repr(float(v)), repr(float(self.gap[k])),
                                repr(float(rm[i])) if rm is not None else ""])


@dataclass
class NetworkSteadyState:
    orbits: tuple
    iterations: int
    gap: float
    converged: bool
    target: np.ndarray
    iterates: list = field(default_factory=list)  # per-iteration orbit tuples when kept

    @property
    def x0(self) -> np.ndarray:
        return np.array([o.x_star.values[0] for o in self.orbits])

    @property
    def z_star(self) -> list:
        return [o.z_star for o in self.orbits]

    def initial_state(self, net: Network, t=0) -> NetState:
        """State on the orbit at ``t``; ``t`` must be a whole number of cycles."""
        if t % net.cycle:
            raise ValueError("orbit state is only tabulated at cycle boundaries")
        return NetState.from_periodic(net, self.x0, self.z_star, t)


def solve_steady(net: Network, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                 keep_iterates: bool = False):
    """Iterate until ``max_i(target_i - zbar_i) <= eps`` or ``max_iter`` rounds.

    Returns ``(NetworkSteadyState, IterationLog)``. The log's RMSE column
    compares each iterate's queues with the final ones.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rep = analysis.stability(net)
    if not rep.stable:
        raise UnstableNetworkError(f"stability margin {rep.margin:.6g} is not positive")
    target = target_average(net)
    log = IterationLog()
    y = list(net.inflows)
    iterates = []
    orbits = ()
    gap = math.inf
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        t0 = time.perf_counter()
        orbits = tuple(orbit_from(y[i], net.capacities[i]) for i in range(net.n_links))
        zbar = np.array([o.z_mean() for o in orbits])
        gap = float(np.max(target - zbar))
        log.zbar.append(zbar)
        log.gap.append(gap)
        iterates.append(orbits)
        if gap <= eps:
            converged = True
            log.wall.append(time.perf_counter() - t0)
            break
        y = route(net, [o.z_star for o in orbits])
        log.wall.append(time.perf_counter() - t0)
    T = net.cycle
    for its in iterates:
        log.rmse_vs_final.append(np.array([
            math.sqrt(max(pl_sq_diff_integral(a.x_star, b.x_star, 0, T), 0.0) / T)
            for a, b in zip(its, orbits)]))
    state = NetworkSteadyState(orbits, k, gap, converged, target,
                               iterates if keep_iterates else [])
    return state, log


def write_bundle(net: Network, state: NetworkSteadyState, log: IterationLog, out_dir) -> Path:
    """Per-link orbit CSVs, the iteration log and a summary in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, orb in enumerate(state.orbits):
        write_orbit_csv(orb, out / f"link_{i:03d}.csv")
    log.write_csv(out / "iterations.csv")
    summary = {
        "n_links": net.n_links,
        "cycle_ms": net.cycle,
        "link_ids": list(net.link_ids),
        "iterations": state.iterations,
        "gap": state.gap,
        "converged": state.converged,
        "target_zbar": state.target.tolist(),
        "x0": state.x0.tolist(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return out


def read_bundle(path, ticks_per_unit: int = 1000):
    """Per-link ``(x_star, z_star)`` pairs from a bundle directory."""
    from .steady_link import read_orbit_csv

    path = Path(path)
    summary = json.loads((path / "summary.json").read_text())
    T = summary["cycle_ms"]
    return [read_orbit_csv(path / f"link_{i:03d}.csv", T, ticks_per_unit)
            for i in range(summary["n_links"])], T
