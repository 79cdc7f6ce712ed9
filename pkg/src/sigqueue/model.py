"""Network description, JSON loading and validation of the standing assumptions."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .pwc import DEFAULT_TICKS_PER_UNIT, PwcFunction

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 10_000


class ConfigError(ValueError):
    """Raised for malformed or tick-misaligned network configuration."""


@dataclass(frozen=True)
class CapacityProfile:
    """Rectangular green pulse: ``c_max`` on ``[offset, offset + green)`` mod ``cycle``."""

    c_max: float
    offset: int
    green: int
    cycle: int

    def __post_init__(self):
        if self.c_max < 0:
            raise ConfigError("c_max must be non-negative")
        if not 0 <= self.offset < self.cycle:
            raise ConfigError(f"offset {self.offset} outside [0, {self.cycle})")
        if not 0 < self.green <= self.cycle:
            raise ConfigError(f"green {self.green} outside (0, {self.cycle}]")

    def to_pwc(self, ticks_per_unit: int = DEFAULT_TICKS_PER_UNIT) -> PwcFunction:
        return PwcFunction.pulse(self.c_max, self.offset, self.green, self.cycle,
                                 ticks_per_unit)

    def with_green(self, green: int) -> "CapacityProfile":
        return CapacityProfile(self.c_max, self.offset, green, self.cycle)


@dataclass(frozen=True)
class RoutingEntry:
    """Fraction ``ratio`` of departures from ``src`` joins ``dst`` after ``delay`` ticks."""

    src: int
    dst: int
    ratio: float
    delay: int = 0

    def __post_init__(self):
        if self.src == self.dst:
            raise ConfigError(f"self-loop on link {self.src}")
        if not 0 < self.ratio <= 1:
            raise ConfigError(f"routing ratio {self.ratio} outside (0, 1]")
        if self.delay < 0:
            raise ConfigError("delay must be non-negative")


@dataclass(frozen=True)
class Network:
    """Links with periodic inflows and capacities, coupled by a routing matrix.

    ``R[j, i]`` (see :meth:`routing_matrix`) is the fraction of link ``j``
    departures that move to link ``i``.
    """

    cycle: int
    inflows: tuple
    capacities: tuple
    routing: tuple = ()
    profiles: tuple = ()
    groups: tuple = ()
    link_ids: tuple = ()
    ticks_per_unit: int = DEFAULT_TICKS_PER_UNIT
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.inflows)
        if len(self.capacities) != n:
            raise ConfigError("need one capacity per link")
        if not self.profiles:
            object.__setattr__(self, "profiles", (None,) * n)
        if not self.groups:
            object.__setattr__(self, "groups", (None,) * n)
        if not self.link_ids:
            object.__setattr__(self, "link_ids", tuple(str(k) for k in range(n)))
        seen = set()
        for e in self.routing:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise ConfigError(f"routing entry {e} references an unknown link")
            if (e.src, e.dst) in seen:
                raise ConfigError(f"duplicate routing entry {e.src}->{e.dst}")
            seen.add((e.src, e.dst))
        for f in list(self.inflows) + list(self.capacities):
            if not f.periodic or f.domain_len != self.cycle or f.start != 0:
                raise ConfigError("inflows and capacities must be periodic on [0, cycle)")
            if f.ticks_per_unit != self.ticks_per_unit:
                raise ConfigError("ticks_per_unit mismatch between network and functions")

    @property
    def n_links(self) -> int:
        return len(self.inflows)

    def routing_matrix(self) -> np.ndarray:
        if "R" not in self._cache:
            R = np.zeros((self.n_links, self.n_links))
            for e in self.routing:
                R[e.src, e.dst] += e.ratio
            R.setflags(write=False)
            self._cache["R"] = R
        return self._cache["R"]

    def max_delay_from(self, j: int) -> int:
        """Longest travel time out of link ``j`` (its history look-back)."""
        return max((e.delay for e in self.routing if e.src == j), default=0)

    def upstream(self, i: int):
        return [e for e in self.routing if e.dst == i]

    def downstream(self, j: int):
        return [e for e in self.routing if e.src == j]

    def with_capacities(self, capacities: Sequence[PwcFunction],
                        profiles: Optional[Sequence] = None) -> "Network":
        return Network(self.cycle, self.inflows, tuple(capacities), self.routing,
                       tuple(profiles) if profiles is not None else self.profiles,
                       self.groups, self.link_ids, self.ticks_per_unit)

    def with_inflows(self, inflows: Sequence[PwcFunction]) -> "Network":
        return Network(self.cycle, tuple(inflows), self.capacities, self.routing,
                       self.profiles, self.groups, self.link_ids, self.ticks_per_unit)


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def lines(self):
        out = [f"error: {m}" for m in self.errors]
        out += [f"warning: {m}" for m in self.warnings]
        if not out:
            out = ["ok"]
        return out


def spectral_radius_below_one(R: np.ndarray) -> bool:
    """True when rho(R) < 1; row-sum shortcut first, then power iteration on |R|."""
    if R.size == 0:
        return True
    A = np.abs(R)
    if A.sum(axis=1).max() < 1:
        return True
    v = np.ones(A.shape[0])
    prev = None
    for _ in range(SPECTRAL_MAX_ITER):
        w = A.T @ v
        nrm = w.max()
        if nrm == 0:
            return True
        v = w / nrm
        if prev is not None and abs(nrm - prev) <= SPECTRAL_TOL:
            break
        prev = nrm
    # the iteration can oscillate for periodic matrices; confirm via eigenvalues
    rho = max(abs(np.linalg.eigvals(A)))
    return bool(rho < 1 - SPECTRAL_TOL)


def validate(net: Network) -> ValidationReport:
    rep = ValidationReport()
    n = net.n_links
    R = net.routing_matrix()
    rows = R.sum(axis=1) if n else np.zeros(0)
    for j in range(n):
        if rows[j] > 1 + 1e-12:
            rep.errors.append(f"row sum of link {net.link_ids[j]} is {rows[j]:.6g} > 1")
    if n and not spectral_radius_below_one(R):
        rep.errors.append("spectral radius of R is not below 1")

    # every link must reach a link that lets traffic leave the network
    drains = [j for j in range(n) if rows[j] < 1 - 1e-12]
    reach = set(drains)
    q = deque(drains)
    preds = [[] for _ in range(n)]
    for e in net.routing:
        preds[e.dst].append(e.src)
    while q:
        k = q.popleft()
        for p in preds[k]:
            if p not in reach:
                reach.add(p)
                q.append(p)
    stuck = [net.link_ids[j] for j in range(n) if j not in reach]
    if stuck:
        rep.errors.append("no path to an exit (row sum < 1) from links " + ", ".join(stuck))

    if n > 1:
        adj = [set() for _ in range(n)]
        for e in net.routing:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        seen = {0}
        q = deque([0])
        while q:
            k = q.popleft()
            for m in adj[k]:
                if m not in seen:
                    seen.add(m)
                    q.append(m)
        if len(seen) < n:
            rep.warnings.append(f"routing graph is not weakly connected "
                                f"({n - len(seen)} links unreachable from link {net.link_ids[0]})")

    for e in net.routing:
        if int(e.delay) != e.delay:
            rep.errors.append(f"delay {e.delay} on {e.src}->{e.dst} is not a whole tick")
    for f in list(net.inflows) + list(net.capacities):
        if any(int(b) != b for b in f.breakpoints):
            rep.errors.append("an inflow or capacity breakpoint is not a whole tick")
            break
        if any(v < 0 for v in f.values):
            rep.errors.append("negative inflow or capacity value")
            break
    return rep


def zero_delay_upstream(net: Network, i: int) -> set:
    if not 0 <= i < net.n_links:
        raise IndexError(f"unknown link {i}")
    return {e.src for e in net.routing if e.dst == i and e.delay == 0}


def average_rates(net: Network):
    lam = np.array([f.mean() for f in net.inflows])
    cap = np.array([f.mean() for f in net.capacities])
    return lam, cap


# -- configuration I/O ------------------------------------------------------

def _tick(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{what} = {v!r} is not a whole number of ticks")
    return int(v)


def _pwc_from_spec(spec: dict, cycle: int, tpu: int, what: str) -> PwcFunction:
    if "constant" in spec:
        return PwcFunction.constant(float(spec["constant"]), cycle, ticks_per_unit=tpu)
    bps = [_tick(b, f"{what} breakpoint") for b in spec["breakpoints_ms"]]
    vals = [float(v) for v in spec["values"]]
    if not bps or bps[0] != 0:
        raise ConfigError(f"{what} breakpoints must start at 0")
    if bps[-1] >= cycle:
        raise ConfigError(f"{what} breakpoints must lie in [0, cycle)")
    return PwcFunction.from_segments(bps, vals, cycle, True, tpu)


def network_from_dict(doc: dict) -> Network:
    try:
        cycle = _tick(doc["cycle_ms"], "cycle_ms")
        tpu = int(doc.get("ticks_per_second", DEFAULT_TICKS_PER_UNIT))
        links = doc["links"]
    except KeyError as exc:
        raise ConfigError(f"missing field {exc}") from None
    if cycle <= 0:
        raise ConfigError("cycle_ms must be positive")
    ids = [str(l.get("id", k)) for k, l in enumerate(links)]
    if len(set(ids)) != len(ids):
        raise ConfigError("link ids must be unique")
    index = {lid: k for k, lid in enumerate(ids)}
    inflows, caps, profiles, groups = [], [], [], []
    for lid, l in zip(ids, links):
        inflows.append(_pwc_from_spec(l.get("inflow", {"constant": 0.0}), cycle, tpu,
                                      f"link {lid} inflow"))
        cs = l["capacity"]
        if "c_max" in cs:
            prof = CapacityProfile(float(cs["c_max"]), _tick(cs["offset_ms"], "offset_ms"),
                                   _tick(cs["green_ms"], "green_ms"), cycle)
            profiles.append(prof)
            caps.append(prof.to_pwc(tpu))
        else:
            profiles.append(None)
            caps.append(_pwc_from_spec(cs, cycle, tpu, f"link {lid} capacity"))
        groups.append(l.get("group"))
    routing = []
    for r in doc.get("routing", []):
        try:
            src, dst = index[str(r["from"])], index[str(r["to"])]
        except KeyError as exc:
            raise ConfigError(f"routing references unknown link {exc}") from None
        routing.append(RoutingEntry(src, dst, float(r["ratio"]),
                                    _tick(r.get("delay_ms", 0), "delay_ms")))
    return Network(cycle, tuple(inflows), tuple(caps), tuple(routing), tuple(profiles),
                   tuple(groups), tuple(ids), tpu)


def load_network(path) -> Network:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return network_from_dict(doc)


def _pwc_to_spec(f: PwcFunction) -> dict:
    if len(f.values) == 1:
        return {"constant": f.values[0]}
    return {"breakpoints_ms": list(f.breakpoints), "values": list(f.values)}


def network_to_dict(net: Network) -> dict:
    links = []
    for k in range(net.n_links):
        prof = net.profiles[k]
        cap = ({"c_max": prof.c_max, "offset_ms": prof.offset, "green_ms": prof.green}
               if prof is not None else _pwc_to_spec(net.capacities[k]))
        if "constant" in cap:
            cap = {"breakpoints_ms": [0], "values": [cap["constant"]]}
        entry = {"id": net.link_ids[k], "inflow": _pwc_to_spec(net.inflows[k]),
                 "capacity": cap}
        if net.groups[k] is not None:
            entry["group"] = net.groups[k]
        links.append(entry)
    routing = [{"from": net.link_ids[e.src], "to": net.link_ids[e.dst], "ratio": e.ratio,
                "delay_ms": e.delay} for e in net.routing]
    doc = {"cycle_ms": net.cycle, "links": links, "routing": routing}
    if net.ticks_per_unit != DEFAULT_TICKS_PER_UNIT:
        doc["ticks_per_second"] = net.ticks_per_unit
    return doc


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))
