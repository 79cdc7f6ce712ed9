import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sigqueue import sim
from sigqueue.model import Network
from sigqueue.pwc import PwcFunction, combine, pl_sup_distance
from sigqueue.steady_link import (UnstableLinkError, analyze, orbit,
                                  orbit_from, read_orbit_csv, write_orbit_csv)

T = 20000


def two_green_cap():
    return PwcFunction.from_segments([0, 5000, 10000, 15000], [2.0, 0.0, 2.0, 0.0], T)


@st.composite
def stable_pair(draw):
    """Random periodic inflow and capacity with mean inflow below mean capacity."""
    def pwc(lo, hi):
        n = draw(st.integers(1, 5))
        cuts = sorted(draw(st.sets(st.integers(1, T // 100 - 1), min_size=n - 1,
                                   max_size=n - 1)))
        vals = draw(st.lists(st.floats(lo, hi), min_size=n, max_size=n))
        return PwcFunction.from_segments([0] + [100 * c for c in cuts], vals, T)

    y, c = pwc(0, 3), pwc(0, 6)
    lift = draw(st.floats(1e-3, 1.0))
    if not y.mean() < c.mean() - lift:
        c = combine([(1.0, c), (1.0, PwcFunction.constant(y.mean() - c.mean() + lift, T))])
    return y, c


class TestAnalyze:
    def test_never_above(self):
        y = PwcFunction.constant(0.5, T)
        ana = analyze(y, PwcFunction.constant(1.0, T))
        assert ana.x0 == 0 and ana.alpha_last is None and ana.m == 0

    def test_single_green(self, single_green):
        ana = analyze(single_green.inflows[0], single_green.capacities[0])
        assert ana.below == ((0, 10000),) and ana.above == ((10000, 20000),)
        assert ana.m == 1 and ana.alpha_last == 10000 and ana.x0 == pytest.approx(5.0)

    def test_two_green_trace(self):
        ana = analyze(PwcFunction.constant(0.5, T), two_green_cap())
        assert ana.w_alpha_index == (0, 1)
        assert ana.m == 2 and ana.alpha_last == 15000 and ana.x0 == pytest.approx(2.5)

    def test_unstable(self):
        with pytest.raises(UnstableLinkError):
            analyze(PwcFunction.constant(1.0, T), PwcFunction.constant(1.0, T))

    def test_period_mismatch(self):
        with pytest.raises(ValueError):
            analyze(PwcFunction.constant(0.1, T), PwcFunction.constant(1.0, 2 * T))

    def test_separating_interval_at_previous_start(self):
        # a below-capacity stretch ending exactly where the first surplus starts
        # must not be counted as separating that surplus from the next one
        y = PwcFunction.constant(0.5, T)
        c = PwcFunction.from_segments([0, 5000, 10000, 11000], [2.0, 0.0, 2.0, 0.0], T)
        ana = analyze(y, c)
        # the 1 s green at 10 s cannot drain the 2.5 veh built up since 5 s
        assert ana.w_alpha_index == (0,) and ana.alpha_last == 5000
        assert ana.x0 == pytest.approx(0.5 * 15 - 2.0 * 1)
        o = orbit_from(y, c)
        assert o.x_star.values[-1] == o.x_star.values[0]
        assert min(o.x_star(t) for t in range(5250, 20000, 250)) > 0


class TestOrbit:
    def test_trivial(self):
        y = PwcFunction.from_segments([0, 5000], [0.2, 0.6], T)
        o = orbit_from(y, PwcFunction.constant(1.0, T))
        assert max(o.x_star.values) == 0 and o.z_star == y

    def test_single_green_hand_solution(self, single_green):
        o = orbit(single_green)
        hand = [(0, 5.0), (10000 / 3, 0.0), (10000, 0.0), (20000, 5.0)]
        for t, v in hand:
            assert o.x_star(t) == pytest.approx(v, abs=1e-9)
        for t in np.linspace(0, T, 301):
            want = 5 - 1.5 * t / 1000 if t <= 10000 / 3 else (0 if t <= 10000 else 0.5 * (t - 10000) / 1000)
            assert o.x_star(t) == pytest.approx(want, abs=1e-9)
        assert o.z_star(1000) == 2.0 and o.z_star(5000) == 0.5 and o.z_star(15000) == 0.0
        assert o.alphas == (10000,)

    def test_two_green_periodic(self):
        o = orbit_from(PwcFunction.constant(0.5, T), two_green_cap())
        assert o.x_star.values[0] == pytest.approx(2.5)
        assert o.z_mean() == pytest.approx(0.5, abs=1e-12)

    def test_override_inflow(self, single_green):
        o = orbit(single_green, PwcFunction.constant(0.0, T))
        assert max(o.x_star.values) == 0

    def test_rejects_multi_link(self, chain):
        with pytest.raises(ValueError):
            orbit(chain)

    @given(stable_pair())
    def test_random_orbits_are_periodic_fixed_points(self, pair):
        y, c = pair
        o = orbit_from(y, c)
        assert o.z_mean() == pytest.approx(y.mean(), abs=1e-9)
        assert min(o.x_star.values) >= 0
        # simulating one period from x0 closes up on the orbit
        net = Network(T, (y,), (c,))
        tr = sim.simulate(net, sim.NetState.cold(net, o.x_star.values[0]), T)
        assert pl_sup_distance(tr.x_curve(0), o.x_star, 0, T) < 1e-9

    @given(stable_pair())
    def test_outflow_rule(self, pair):
        y, c = pair
        o = orbit_from(y, c)
        x = o.x_star
        for a, b, v in o.z_star.segments():
            m = (a + b) / 2
            if x(m) > 1e-9:
                assert v == pytest.approx(c(m))
            elif x(a) == 0 and x(b) == 0:
                assert v == pytest.approx(min(y(m), c(m)))

    @given(stable_pair(), st.floats(0, 50))
    def test_attracts_long_simulation(self, pair, x_start):
        y, c = pair
        o = orbit_from(y, c)
        net = Network(T, (y,), (c,))
        s = sim.Simulator(net, sim.NetState.cold(net, x_start), record=False)
        s.run_until(200 * T)
        # a single link settles after the first full busy period; slack leaves margin
        if y.mean() < c.mean() - 0.05:
            assert s.x[0] == pytest.approx(o.x_star.values[0], abs=1e-6)


def test_orbit_csv_round_trip(tmp_path, single_green):
    o = orbit(single_green)
    p = tmp_path / "link.csv"
    write_orbit_csv(o, p)
    x, z = read_orbit_csv(p, T)
    assert pl_sup_distance(x, o.x_star, 0, T) == 0
    assert z == o.z_star
    side = json.loads((tmp_path / "link.alphas.json").read_text())
    assert side["alpha_last_ms"] == 10000 and side["x0"] == pytest.approx(5.0)
