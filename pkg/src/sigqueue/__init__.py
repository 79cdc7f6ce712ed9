"""Queue dynamics on signalized road networks and their periodic steady states."""

from .model import CapacityProfile, Network, RoutingEntry, load_network, validate
from .pwc import PiecewiseLinear, PwcFunction
from .sim import NetState, Trajectory, simulate
from .steady_link import PeriodicOrbit, analyze, orbit, orbit_from
from .steady_net import NetworkSteadyState, route, solve_steady, target_average
from .analysis import stability

__all__ = [
    "CapacityProfile", "Network", "RoutingEntry", "load_network", "validate",
    "PiecewiseLinear", "PwcFunction", "NetState", "Trajectory", "simulate",
    "PeriodicOrbit", "analyze", "orbit", "orbit_from", "NetworkSteadyState", "route",
    "solve_steady", "target_average", "stability",
]
