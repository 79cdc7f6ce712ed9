"""Exact event-driven simulation of the queue network, plus a forward-Euler reference.

Between events every input is constant, the outflow vector is constant and
each queue evolves linearly, so the trajectory is exact up to rounding.
Events are exogenous breakpoints of inflows and capacities, delayed arrivals
of upstream outflow changes, and predicted instants at which a queue empties.
Time is in ticks; emptying instants are kept as fractional ticks.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import CapacityProfile, Network
from .outflow import solver_for
from .pwc import PiecewiseLinear, PwcFunction

TIME_EPS = 1e-7        # ticks; events closer than this are merged
SLOPE_TOL = 1e-12      # |dx/dt| below this on an empty queue counts as zero
Z_SNAP = 1e-13         # outflow changes smaller than this are not propagated
STORM_FACTOR = 10

_window_observers: list = []


def add_window_observer(cb: Callable) -> None:
    """Register ``cb(stats)`` to be called with every finished :class:`WindowStats`."""
    _window_observers.append(cb)


def remove_window_observer(cb: Callable) -> None:
    if cb in _window_observers:
        _window_observers.remove(cb)


def _notify(stats) -> None:
    for cb in list(_window_observers):
        cb(stats)


class EventStormError(RuntimeError):
    """Too many zero-set changes inside one constant-input window."""


class HistoryError(ValueError):
    """Departure history does not cover the look-back a query needs."""


@dataclass
class WindowStats:
    """Zero-set bookkeeping over the constant-input windows of one run."""

    n_links: int
    windows: int = 0
    max_changes: int = 0
    violations: list = field(default_factory=list)  # (t, links that left)

    @property
    def ok(self) -> bool:
        return not self.violations and self.max_changes <= self.n_links


@dataclass
class NetState:
    """Queue lengths at time ``t`` and each link's departures over ``[t - dbar_j, t)``.

    ``beta[j]`` is ``None`` when link ``j`` has no positive-delay successor.
    """

    t: float
    x: np.ndarray
    beta: tuple

    @classmethod
    def cold(cls, net: Network, x0=0.0, t=0) -> "NetState":
        x = np.broadcast_to(np.asarray(x0, dtype=float), (net.n_links,)).copy()
        if (x < 0).any():
            raise ValueError("queue lengths must be non-negative")
        beta = []
        for j in range(net.n_links):
            d = net.max_delay_from(j)
            beta.append(PwcFunction((t - d,), (0.0,), d, False, net.ticks_per_unit)
                        if d > 0 else None)
        return cls(t, x, tuple(beta))

    @classmethod
    def from_periodic(cls, net: Network, x0, z_periodic: Sequence[PwcFunction],
                      t=0) -> "NetState":
        """State whose history is the periodic extension of ``z_periodic`` before ``t``."""
        beta = []
        for j in range(net.n_links):
            d = net.max_delay_from(j)
            beta.append(z_periodic[j].restrict(t - d, t) if d > 0 else None)
        return cls(t, np.asarray(x0, dtype=float).copy(), tuple(beta))


def in_transit(net: Network, state: NetState) -> float:
    """Vehicles travelling between links, ``sum_e R_e * integral of z_src over the delay``."""
    tot = 0.0
    for e in net.routing:
        if e.delay > 0:
            b = state.beta[e.src]
            tot += e.ratio * b.integrate(state.t - e.delay, state.t)
    return tot


def effective_inflow(net: Network, state: NetState) -> np.ndarray:
    """External inflow plus delayed upstream departures arriving at ``state.t``."""
    t = state.t
    lt = np.array([f(t) for f in net.inflows])
    for e in net.routing:
        if e.delay <= 0:
            continue
        b = state.beta[e.src]
        s = t - e.delay
        if b is None or b.domain_len == 0 or s < b.start - TIME_EPS or s >= b.end:
            raise HistoryError(f"history of link {e.src} does not cover t - {e.delay}")
        lt[e.dst] += e.ratio * b(max(s, b.start))
    return lt


@dataclass
class Trajectory:
    """Knots of the piecewise-linear queues and the outflow held after each knot."""

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    events: list
    windows: WindowStats
    ticks_per_unit: int
    final: Optional[NetState] = None

    @property
    def n_links(self) -> int:
        return self.x.shape[1]

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def x_curve(self, i: int) -> PiecewiseLinear:
        return PiecewiseLinear(tuple(self.times.tolist()), tuple(self.x[:, i].tolist()))

    def z_function(self, i: int) -> PwcFunction:
        ts, zs = self.times.tolist(), self.z[:, i].tolist()
        bps, vals = [], []
        for k in range(len(ts) - 1):
            if ts[k + 1] > ts[k]:
                bps.append(ts[k])
                vals.append(zs[k])
        if not bps:
            return PwcFunction((), (), 0, False, self.ticks_per_unit)
        return PwcFunction.from_segments(bps, vals, ts[-1] - ts[0], False, self.ticks_per_unit)

    def x_at(self, t) -> np.ndarray:
        ts = self.times
        if t < ts[0] - TIME_EPS or t > ts[-1] + TIME_EPS:
            raise ValueError(f"t={t} outside the trajectory")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 1)
        if k == len(ts) - 1 or ts[k + 1] == ts[k]:
            return self.x[k].copy()
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return self.x[k] + w * (self.x[k + 1] - self.x[k])

    def z_at(self, t) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.z[min(max(k, 0), len(self.times) - 1)].copy()


class Simulator:
    """Resumable exact integrator.

    With ``record_from`` set, knots before that time are not stored, which
    keeps long warm-up runs cheap.
    """

    def __init__(self, net: Network, init: NetState, record: bool = True,
                 record_from: Optional[float] = None):
        self.net = net
        self.n = n = net.n_links
        self.tpu = net.ticks_per_unit
        self.T = net.cycle
        self.solver = solver_for(net)
        self.t = float(init.t)
        self.x = np.array(init.x, dtype=float)
        if self.x.shape != (n,) or (self.x < 0).any():
            raise ValueError("initial queue vector must be non-negative with one entry per link")
        self.record = record
        self.record_from = record_from
        self._set_tables(net.capacities)

        pos = [e for e in net.routing if e.delay > 0]
        self.pe = pos
        self.pe_by_src = [[] for _ in range(n)]
        for k, e in enumerate(pos):
            self.pe_by_src[e.src].append(k)
        self.zup = [[] for _ in range(n)]
        for e in net.routing:
            if e.delay == 0:
                self.zup[e.dst].append((e.src, e.ratio))
        self.dbar = [net.max_delay_from(j) for j in range(n)]

        # delayed values currently arriving along each positive-delay edge
        self.d = [0.0] * len(pos)
        self.heap = []
        self.seq = 0
        self.zh_t = [[] for _ in range(n)]
        self.zh_v = [[] for _ in range(n)]
        for j in range(n):
            if self.dbar[j] == 0:
                continue
            b = init.beta[j] if init.beta else None
            if b is None or b.domain_len == 0:
                b = PwcFunction((self.t - self.dbar[j],), (0.0,), self.dbar[j], False, self.tpu)
            if b.start > self.t - self.dbar[j] + TIME_EPS or abs(b.end - self.t) > TIME_EPS:
                raise HistoryError(f"history of link {j} must cover [t - {self.dbar[j]}, t)")
            for bp, v in zip(b.breakpoints, b.values):
                self.zh_t[j].append(bp)
                self.zh_v[j].append(v)
            for k in self.pe_by_src[j]:
                s = self.t - pos[k].delay
                self.d[k] = b(max(s, b.start))
                for bp, v in zip(b.breakpoints, b.values):
                    if s < bp:
                        self._push(bp + pos[k].delay, k, v)

        self.z = None
        self.slope = np.zeros(n)
        self.zero_set = frozenset()
        self.times, self.xs, self.zs = [], [], []
        self.events = []
        self.stats = WindowStats(n)
        self._win_changes = 0
        self._win_open = False
        self.max_x = self.x.copy()
        self._process(boundary=True)

    # -- input tables ---------------------------------------------------

    def _set_tables(self, capacities: Sequence[PwcFunction]):
        self.caps = tuple(capacities)
        pts = sorted({b for f in list(self.net.inflows) + list(self.caps) for b in f.breakpoints})
        self.pts = pts
        self.lam_tab = [np.array([f(p) for f in self.net.inflows]) for p in pts]
        self.cap_tab = [np.array([f(p) for f in self.caps]) for p in pts]

    def set_capacities(self, capacities: Sequence[PwcFunction]) -> None:
        """Swap capacity functions from the current time on, recomputing outflows now."""
        self._set_tables(capacities)
        self._process(boundary=True, replace=True)

    def _locate(self, t):
        k = math.floor((t + TIME_EPS) / self.T)
        u = t + TIME_EPS - k * self.T
        if u >= self.T:
            k += 1
            u -= self.T
        return k, max(u, 0.0)

    def _seg(self, t):
        _, u = self._locate(t)
        return bisect.bisect_right(self.pts, u) - 1

    def _next_exo(self, t):
        k, u = self._locate(t)
        idx = bisect.bisect_right(self.pts, u)
        if idx < len(self.pts):
            return k * self.T + self.pts[idx]
        return (k + 1) * self.T

    def _push(self, when, edge, value):
        self.seq += 1
        heapq.heappush(self.heap, (when, self.seq, edge, value))

    # -- core step --------------------------------------------------------

    def _process(self, boundary: bool, replace: bool = False):
        t, n = self.t, self.n
        seg = self._seg(t)
        lam = self.lam_tab[seg]
        cap = self.cap_tab[seg]
        lt = lam.copy()
        for k, e in enumerate(self.pe):
            lt[e.dst] += e.ratio * self.d[k]
        self.lt = lt
        mask = self.x <= 0.0
        z = self.solver.solve_arrays(mask, lt, cap)
        old = self.z
        if old is not None:
            close = np.abs(z - old) <= Z_SNAP * np.maximum(1.0, np.abs(old))
            z = np.where(close, old, z)
        slope = lt - z
        for i in range(n):
            for j, r in self.zup[i]:
                slope[i] += r * z[j]
        zero = []
        for i in range(n):
            if mask[i] and slope[i] <= SLOPE_TOL:
                slope[i] = 0.0
                zero.append(i)
        zero = frozenset(zero)

        # propagate outflow changes downstream
        for j in range(n):
            if old is None or z[j] != old[j]:
                if self.dbar[j] > 0:
                    if self.zh_t[j] and abs(self.zh_t[j][-1] - t) <= TIME_EPS:
                        self.zh_v[j][-1] = z[j]
                    else:
                        self.zh_t[j].append(t)
                        self.zh_v[j].append(z[j])
                    if len(self.zh_t[j]) > 4096:
                        self._prune(j)
                for k in self.pe_by_src[j]:
                    self._push(t + self.pe[k].delay, k, float(z[j]))

        self._track_zero_set(zero, boundary)
        self.z = z
        self.slope = slope
        self.zero_set = zero
        if self.record and (self.record_from is None or t >= self.record_from - TIME_EPS):
            if replace and self.times and self.times[-1] == t:
                self.zs[-1] = z.copy()
            else:
                self.times.append(t)
                self.xs.append(self.x.copy())
                self.zs.append(z.copy())

    def _prune(self, j):
        cut = self.t - self.dbar[j] - 1
        k = bisect.bisect_left(self.zh_t[j], cut)
        keep = max(k - 1, 0)
        del self.zh_t[j][:keep]
        del self.zh_v[j][:keep]

    def _track_zero_set(self, zero, boundary):
        prev = self.zero_set
        for i in zero - prev:
            self.events.append((self.t, "join", i))
        for i in prev - zero:
            self.events.append((self.t, "leave", i))
        if boundary or not self._win_open:
            self._close_window()
            self._win_open = True
            self._win_changes = 0
            return
        lost = prev - zero
        if lost:
            self.stats.violations.append((self.t, tuple(sorted(lost))))
        self._win_changes += len(zero ^ prev)
        self.stats.max_changes = max(self.stats.max_changes, self._win_changes)
        if self._win_changes > STORM_FACTOR * self.n:
            raise EventStormError(f"{self._win_changes} zero-set changes in one window "
                                  f"ending near t={self.t}")

    def _close_window(self):
        if self._win_open:
            self.stats.windows += 1

    def run_until(self, t_end: float) -> None:
        """Advance to ``t_end``; outflows at ``t_end`` are computed right-continuously."""
        tpu = self.tpu
        while self.t < t_end - TIME_EPS:
            t = self.t
            t_exo = self._next_exo(t)
            t_arr = self.heap[0][0] if self.heap else math.inf
            x, slope = self.x, self.slope
            t_hit = math.inf
            hits = []
            for i in range(self.n):
                if x[i] > 0 and slope[i] < 0:
                    th = t + x[i] / (-slope[i]) * tpu
                    hits.append((th, i))
                    if th < t_hit:
                        t_hit = th
            t_next = min(t_exo, t_arr, t_hit, t_end)
            if t_next < t:
                t_next = t
            dt = (t_next - t) / tpu
            self.x = x + slope * dt
            for th, i in hits:
                if th <= t_next + TIME_EPS:
                    self.x[i] = 0.0
            np.maximum(self.x, 0.0, out=self.x)
            np.maximum(self.max_x, self.x, out=self.max_x)
            self.t = t_next
            boundary = t_exo <= t_next + TIME_EPS
            while self.heap and self.heap[0][0] <= t_next + TIME_EPS:
                _, _, k, v = heapq.heappop(self.heap)
                self.d[k] = v
                boundary = True
            self._process(boundary=boundary)

    def state(self) -> NetState:
        beta = []
        for j in range(self.n):
            d = self.dbar[j]
            if d == 0:
                beta.append(None)
                continue
            a = self.t - d
            ts, vs = self.zh_t[j], self.zh_v[j]
            k = max(bisect.bisect_right(ts, a + TIME_EPS) - 1, 0)
            bps, vals = [a], [vs[k]]
            for tt, vv in zip(ts[k + 1:], vs[k + 1:]):
                if tt < self.t - TIME_EPS:
                    if tt <= bps[-1] + TIME_EPS:
                        vals[-1] = vv
                    else:
                        bps.append(tt)
                        vals.append(vv)
            beta.append(PwcFunction.from_segments(bps, vals, d, False, self.tpu))
        return NetState(self.t, self.x.copy(), tuple(beta))

    def trajectory(self) -> Trajectory:
        self._close_window()
        self._win_open = False
        _notify(self.stats)
        if self.times:
            times = np.array(self.times)
            xs = np.array(self.xs)
            zs = np.array(self.zs)
        else:
            times, xs, zs = np.zeros(0), np.zeros((0, self.n)), np.zeros((0, self.n))
        return Trajectory(times, xs, zs, list(self.events), self.stats, self.tpu, self.state())


def simulate(net: Network, init: NetState, horizon: float,
             record_from: Optional[float] = None) -> Trajectory:
    """Exact trajectory on ``[init.t, horizon]``."""
    if horizon < init.t:
        raise ValueError("horizon precedes the initial time")
    s = Simulator(net, init, record_from=record_from)
    s.run_until(horizon)
    return s.trajectory()


# -- forward-Euler reference -------------------------------------------------

def euler_oracle(net: Network, init: NetState, horizon: float, dt: float) -> Trajectory:
    """Forward Euler with ``x <- max(0, x + dt * xdot)``; ``dt`` in ticks.

    Test-only reference. Outflows are recomputed every step (memoized on the
    exact step inputs). Delays must be whole multiples of ``dt``.
    """
    n, tpu, T = net.n_links, net.ticks_per_unit, net.cycle
    solver = solver_for(net)
    t0 = float(init.t)
    steps = int(round((horizon - t0) / dt))
    if abs(t0 + steps * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError("horizon - t0 must be a whole number of steps")
    pos = [e for e in net.routing if e.delay > 0]
    lags = []
    for e in pos:
        q = e.delay / dt
        if abs(q - round(q)) > 1e-9:
            raise ValueError(f"delay {e.delay} is not a multiple of dt={dt}")
        lags.append(int(round(q)))
    maxlag = max(lags, default=0)
    zup = [[] for _ in range(n)]
    for e in net.routing:
        if e.delay == 0:
            zup[e.dst].append((e.src, e.ratio))

    # outflow history on the step grid, index maxlag <-> t0
    zh = np.zeros((steps + maxlag + 1, n))
    for m in range(maxlag):
        s = t0 - (maxlag - m) * dt
        for j in range(n):
            b = init.beta[j] if init.beta else None
            if b is not None and b.domain_len > 0 and s >= b.start - TIME_EPS:
                zh[m, j] = b(max(s, b.start))

    pts = sorted({b for f in list(net.inflows) + list(net.capacities) for b in f.breakpoints})
    lam_tab = [np.array([f(p) for f in net.inflows]) for p in pts]
    cap_tab = [np.array([f(p) for f in net.capacities]) for p in pts]
    pe_dst = np.array([e.dst for e in pos], dtype=int)
    pe_src = np.array([e.src for e in pos], dtype=int)
    pe_r = np.array([e.ratio for e in pos])
    lag_arr = np.array(lags, dtype=int)
    Rz = np.zeros((n, n))
    for e in net.routing:
        if e.delay == 0:
            Rz[e.dst, e.src] += e.ratio

    cache = {}
    x = np.array(init.x, dtype=float)
    times = np.empty(steps + 1)
    X = np.empty((steps + 1, n))
    Z = np.empty((steps + 1, n))
    for k in range(steps + 1):
        t = t0 + k * dt
        u = (t + TIME_EPS) % T
        seg = bisect.bisect_right(pts, u) - 1
        lt = lam_tab[seg].copy()
        row = k + maxlag
        if len(pos):
            np.add.at(lt, pe_dst, pe_r * zh[row - lag_arr, pe_src])
        mask = x <= 0.0
        key = (mask.tobytes(), lt.tobytes(), seg)
        z = cache.get(key)
        if z is None:
            z = solver.solve_arrays(mask, lt, cap_tab[seg])
            if len(cache) > 200_000:
                cache.clear()
            cache[key] = z
        zh[row] = z
        times[k] = t
        X[k] = x
        Z[k] = z
        if k == steps:
            break
        xdot = lt + Rz @ z - z
        # roundoff on an empty queue must not reopen it (that chatters at c_max)
        xdot[mask & (np.abs(xdot) <= SLOPE_TOL * (1.0 + np.abs(lt) + np.abs(z)))] = 0.0
        x = np.maximum(0.0, x + (dt / tpu) * xdot)
    stats = WindowStats(n)
    return Trajectory(times, X, Z, [], stats, tpu, None)


# -- adaptive green splits ----------------------------------------------------

def proportional_split(max_queues: Sequence[float], budget: int,
                       previous: Sequence[int]) -> list:
    """Green ticks proportional to last cycle's peak queues.

    Largest-remainder rounding keeps the split summing to ``budget``; every
    link keeps at least one tick. All-zero queues keep ``previous``.
    """
    w = np.asarray(max_queues, dtype=float)
    m = len(w)
    if m == 0:
        return []
    if w.sum() <= 0:
        return list(previous)
    if budget < m:
        raise ValueError("green budget smaller than one tick per link")
    raw = budget * w / w.sum()
    g = np.floor(raw).astype(int)
    order = np.argsort(-(raw - g), kind="stable")
    for k in order[: budget - g.sum()]:
        g[k] += 1
    # at least one tick each, taken from the largest split
    while (g < 1).any():
        g[int(np.argmin(g))] += 1
        g[int(np.argmax(g))] -= 1
    return [int(v) for v in g]


def adaptive_green(net: Network, init: NetState, horizon: float,
                   rule: str = "proportional") -> tuple:
    """Simulate while re-splitting green time at every cycle boundary.

    Returns the trajectory and the per-cycle green ticks (one row per cycle).
    """
    if rule != "proportional":
        raise ValueError(f"unknown rule {rule!r}")
    if any(p is None for p in net.profiles):
        raise ValueError("adaptive green needs rectangular capacity profiles on every link")
    groups = {}
    for i, gname in enumerate(net.groups):
        groups.setdefault(gname if gname is not None else ("solo", i), []).append(i)
    profiles = list(net.profiles)
    sim = Simulator(net, init)
    history = [[p.green for p in profiles]]
    T = net.cycle
    k = math.floor(init.t / T) + 1
    while sim.t < horizon - TIME_EPS:
        stop = min(k * T, horizon)
        sim.max_x = sim.x.copy()
        sim.run_until(stop)
        if stop < k * T:
            break
        for links in groups.values():
            prev = [profiles[i].green for i in links]
            split = proportional_split([sim.max_x[i] for i in links], sum(prev), prev)
            for i, g in zip(links, split):
                profiles[i] = profiles[i].with_green(g)
        sim.set_capacities([p.to_pwc(net.ticks_per_unit) for p in profiles])
        history.append([p.green for p in profiles])
        k += 1
    return sim.trajectory(), history


# -- CSV export ----------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "link", "x", "z"])
        for k, t in enumerate(traj.times):
            for i in range(traj.n_links):
                w.writerow([repr(float(t)), i, repr(float(traj.x[k, i])),
                            repr(float(traj.z[k, i]))])


def write_events_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "kind", "link"])
        for t, kind, link in traj.events:
            w.writerow([repr(float(t)), kind, link])


def read_trajectory_csv(path, ticks_per_unit: int = 1000) -> Trajectory:
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(float(r["t_ms"]), {})[int(r["link"])] = (float(r["x"]), float(r["z"]))
    times = sorted(rows)
    n = 1 + max(max(v) for v in rows.values())
    X = np.array([[rows[t][i][0] for i in range(n)] for t in times])
    Z = np.array([[rows[t][i][1] for i in range(n)] for t in times])
    return Trajectory(np.array(times), X, Z, [], WindowStats(n), ticks_per_unit, None)
