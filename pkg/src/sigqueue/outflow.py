"""Instantaneous link outflows.

The outflow LP (maximize a positive weighting of ``z`` subject to capacity
limits, and inflow limits on empty links) has a unique, weight-free optimum:
the componentwise largest ``z`` with ``z_i = c_i`` off the zero set and
``z_i = min(c_i, lt_i + sum_j R_ji z_j)`` on it, the sum running over
zero-delay upstream links. :func:`solve` computes that fixed point exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Network

BRANCH_TOL = 1e-12


class OutflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutflowQuery:
    zero_set: frozenset
    lam_tilde: tuple
    c_now: tuple

    def __post_init__(self):
        object.__setattr__(self, "zero_set", frozenset(self.zero_set))
        object.__setattr__(self, "lam_tilde", tuple(float(v) for v in self.lam_tilde))
        object.__setattr__(self, "c_now", tuple(float(v) for v in self.c_now))
        if len(self.lam_tilde) != len(self.c_now):
            raise ValueError("lam_tilde and c_now lengths differ")
        if min(self.lam_tilde, default=0) < 0 or min(self.c_now, default=0) < 0:
            raise ValueError("inflows and capacities must be non-negative")


@dataclass(frozen=True)
class OutflowSolution:
    z: np.ndarray


def _tarjan(nodes: Sequence[int], succ) -> list:
    """Strongly connected components, upstream components first."""
    index, low, on_stack = {}, {}, set()
    stack, comps, counter = [], [], [0]
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(comp)
    comps.reverse()
    return comps


class OutflowSolver:
    """Per-network solver that caches the component structure for each zero set."""

    def __init__(self, net: Network):
        self.n = net.n_links
        self.up = [[] for _ in range(self.n)]  # zero-delay (j, R_ji) feeding i
        for e in net.routing:
            if e.delay == 0:
                self.up[e.dst].append((e.src, e.ratio))
        self._plans = {}

    def _plan(self, members: frozenset):
        plan = self._plans.get(members)
        if plan is not None:
            return plan
        succ = {i: [] for i in members}
        for i in members:
            for j, _ in self.up[i]:
                if j in members:
                    succ[j].append(i)
        steps = []
        for comp in _tarjan(sorted(members), succ):
            if len(comp) == 1:
                steps.append((comp[0], None))
                continue
            comp = sorted(comp)
            pos = {v: k for k, v in enumerate(comp)}
            M = np.zeros((len(comp), len(comp)))
            outside = []
            for k, i in enumerate(comp):
                ext = []
                for j, r in self.up[i]:
                    if j in pos:
                        M[k, pos[j]] += r
                    else:
                        ext.append((j, r))
                outside.append(ext)
            steps.append((comp, (M, outside)))
        if len(self._plans) > 4096:
            self._plans.clear()
        self._plans[members] = steps
        return steps

    def solve_arrays(self, zero_mask, lam_tilde, c_now) -> np.ndarray:
        """Max fixed point for a boolean zero mask and plain arrays."""
        z = [float(v) for v in c_now]
        members = frozenset(i for i in range(self.n) if zero_mask[i])
        if not members:
            return np.array(z)
        up = self.up
        for comp, cyc in self._plan(members):
            if cyc is None:
                i = comp
                s = lam_tilde[i]
                for j, r in up[i]:
                    s += r * z[j]
                if s < z[i]:
                    z[i] = s
                continue
            M, outside = cyc
            a = np.empty(len(comp))
            for k, i in enumerate(comp):
                s = lam_tilde[i]
                for j, r in outside[k]:
                    s += r * z[j]
                a[k] = s
            zs = _cyclic_max_fixed_point(M, a, np.array([c_now[i] for i in comp]))
            for k, i in enumerate(comp):
                z[i] = float(zs[k])
        return np.array(z)


def _cyclic_max_fixed_point(M: np.ndarray, a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Largest ``z`` with ``z = min(c, a + M z)``, by growing the inflow-bound set.

    Starting from ``z = c``, each round moves links whose inflow bound is
    below capacity onto the inflow branch and re-solves that branch exactly.
    Iterates only decrease and stay above every fixed point, so the loop ends
    on the largest one after at most ``len(c)`` rounds.
    """
    m = len(c)
    z = c.copy()
    bound = np.zeros(m, dtype=bool)
    for _ in range(m + 1):
        f = a + M @ z
        grow = (~bound) & (f < c - BRANCH_TOL * np.maximum(1.0, np.abs(c)))
        if not grow.any():
            return np.minimum(z, c)
        bound |= grow
        P = np.flatnonzero(bound)
        Q = np.flatnonzero(~bound)
        rhs = a[P] + M[np.ix_(P, Q)] @ c[Q]
        A = np.eye(len(P)) - M[np.ix_(P, P)]
        try:
            zp = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise OutflowError("singular flow system; spectral radius of R not below 1") from exc
        z = c.copy()
        z[P] = zp
    raise OutflowError("inflow-branch growth did not settle")


def solver_for(net: Network) -> OutflowSolver:
    s = net._cache.get("outflow_solver")
    if s is None:
        s = OutflowSolver(net)
        net._cache["outflow_solver"] = s
    return s


def solve(net: Network, q: OutflowQuery) -> OutflowSolution:
    n = net.n_links
    if len(q.c_now) != n:
        raise ValueError("query size does not match the network")
    mask = [i in q.zero_set for i in range(n)]
    z = solver_for(net).solve_arrays(mask, q.lam_tilde, q.c_now)
    return OutflowSolution(z)


def lp_oracle(net: Network, q: OutflowQuery, eta: Sequence[float]) -> OutflowSolution:
    """Solve the outflow LP directly with HiGHS, then polish on the active set.

    Test-only reference. The polish step re-solves the tight constraints as a
    square linear system so the result is accurate to rounding error.
    """
    from scipy.optimize import linprog

    n = net.n_links
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (n,) or (eta <= 0).any():
        raise ValueError("eta must be a positive vector, one entry per link")
    c = np.asarray(q.c_now)
    lt = np.asarray(q.lam_tilde)
    rows, rhs = [], []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e)
        rhs.append(c[i])
    for i in sorted(q.zero_set):
        e = np.zeros(n)
        e[i] = 1.0
        for ent in net.routing:
            if ent.dst == i and ent.delay == 0:
                e[ent.src] -= ent.ratio
        rows.append(e)
        rhs.append(lt[i])
    A = np.array(rows)
    b = np.array(rhs)
    res = linprog(-eta, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    if res.status != 0:
        raise OutflowError(f"LP reference failed: {res.message}")
    z = res.x
    slack = b - A @ z
    tight = np.flatnonzero(np.abs(slack) <= 1e-7 * np.maximum(1.0, np.abs(b)))
    if len(tight) >= n:
        At, bt = A[tight], b[tight]
        zp, *_ = np.linalg.lstsq(At, bt, rcond=None)
        if np.all(A @ zp <= b + 1e-9) and eta @ zp >= eta @ z - 1e-9:
            z = zp
    return OutflowSolution(np.asarray(z))
