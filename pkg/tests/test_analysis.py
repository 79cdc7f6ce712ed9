import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigqueue import analysis, oracle, sim
from sigqueue.model import Network, RoutingEntry
from sigqueue.pwc import PiecewiseLinear, PwcFunction

from conftest import load

T = 20000


class TestStability:
    def test_single_green(self, single_green):
        rep = analysis.stability(single_green)
        assert rep.margin == pytest.approx(0.5) and rep.stable

    def test_boundary_is_unstable(self):
        net = Network(T, (PwcFunction.constant(1.0, T),),
                      (PwcFunction.from_segments([0, 10000], [2.0, 0.0], T),))
        rep = analysis.stability(net)
        assert rep.margin == pytest.approx(0.0, abs=1e-15) and not rep.stable

    def test_grid24_as_printed(self):
        # the printed network tables do not satisfy the margin condition at link 8
        rep = analysis.stability(load("grid24"))
        assert int(np.argmin(rep.slack)) == 7 and rep.margin < 0

    def test_grid24_scaled_variant(self):
        assert analysis.stability(load("grid24_scaled")).margin > 0.2

    def test_la(self):
        assert analysis.stability(load("la_downtown")).stable

    @given(st.integers(0, 1000), st.integers(0, 1999))
    def test_shift_invariant(self, seed, d):
        from sigqueue.pwc import shift_periodic

        net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=4))
        moved = Network(net.cycle, tuple(shift_periodic(f, d) for f in net.inflows),
                        tuple(shift_periodic(f, 2 * d) for f in net.capacities), net.routing)
        assert analysis.stability(moved).margin == pytest.approx(
            analysis.stability(net).margin, abs=1e-12)

    def test_as_dict(self, single_green):
        d = analysis.stability(single_green).as_dict()
        assert d["stable"] and d["slack"] == pytest.approx([0.5])


def delayed_pair():
    return Network(T, (PwcFunction.constant(0.2, T),) * 2, (PwcFunction.constant(3.0, T),) * 2,
                   (RoutingEntry(0, 1, 0.5, 3000),))


class TestDistance:
    def test_identical(self, single_green):
        a = sim.NetState.cold(single_green, 2.0)
        s = analysis.l1_distance(single_green, a, a)
        assert (s.state_gap, s.history_gap) == (0.0, 0.0)

    def test_queue_gap(self, chain):
        a = sim.NetState.cold(chain, [1.0, 2.0])
        b = sim.NetState.cold(chain, [2.0, 2.0])
        s = analysis.l1_distance(chain, a, b)
        assert (s.state_gap, s.history_gap) == (1.0, 0.0)

    def test_history_gap(self):
        net = delayed_pair()
        a = sim.NetState.cold(net, 0.0)
        b = sim.NetState(0, np.zeros(2), (PwcFunction((-3000,), (2.0,), 3000, False), None))
        s = analysis.l1_distance(net, a, b)
        assert s.history_gap == pytest.approx(0.5 * 2 * 3)

    def test_time_mismatch(self, chain):
        with pytest.raises(ValueError):
            analysis.l1_distance(chain, sim.NetState.cold(chain, 0.0, 0),
                                 sim.NetState.cold(chain, 0.0, 10))


class TestContraction:
    def test_identical_inits(self, single_green):
        a = sim.NetState.cold(single_green, 3.0)
        rep = analysis.check_contraction(single_green, a, a, 10)
        assert all(s.total == 0 for s in rep.samples)

    def test_single_green_converges(self, single_green):
        rep = analysis.check_contraction(single_green, sim.NetState.cold(single_green, 0.0),
                                         sim.NetState.cold(single_green, 5.0), 50)
        assert not rep.violations
        assert rep.final < 0.01 * rep.initial

    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.sampled_from(oracle.DELAY_MODES))
    def test_random_nets_never_expand(self, seed, mode):
        net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=5, delay_mode=mode))
        rng = np.random.default_rng(seed)
        a = sim.NetState.cold(net, rng.uniform(0, 10, 5))
        b = sim.NetState.cold(net, rng.uniform(0, 10, 5))
        rep = analysis.check_contraction(net, a, b, 30)
        assert not rep.violations


class TestRmse:
    def test_equal(self, single_green):
        from sigqueue.steady_link import orbit

        o = orbit(single_green)
        assert analysis.rmse(o, o, T)[0] == 0.0

    def test_constant_offset(self):
        a = PiecewiseLinear((0.0, float(T)), (0.0, 0.0))
        b = PiecewiseLinear((0.0, float(T)), (2.0, 2.0))
        assert analysis.rmse([a], [b], T)[0] == pytest.approx(2.0)

    def test_ramp(self):
        a = PiecewiseLinear((0.0, float(T)), (0.0, 3.0))
        b = PiecewiseLinear((0.0, float(T)), (0.0, 0.0))
        assert analysis.rmse([a], [b], T)[0] == pytest.approx(3.0 / math.sqrt(3))

    def test_window_too_short(self):
        a = PiecewiseLinear((0.0, 10.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            analysis.rmse([a], [a], T)

    def test_pwc_rmse(self):
        f = PwcFunction.constant(1.0, T)
        g = PwcFunction.from_segments([0, 10000], [1.0, 3.0], T)
        assert analysis.rmse_pwc([f], [g], 0, T)[0] == pytest.approx(math.sqrt(2.0))


class TestQueueBound:
    def test_requires_stability(self):
        net = Network(T, (PwcFunction.constant(2.0, T),), (PwcFunction.constant(1.0, T),))
        with pytest.raises(ValueError):
            analysis.queue_bound(net, [0.0])

    def test_dominates_initial(self, single_green):
        assert analysis.queue_bound(single_green, [100.0])[0] >= 100.0

    @settings(max_examples=8)
    @given(st.integers(0, 10_000))
    def test_holds_over_200_cycles(self, seed):
        net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=4,
                                                         delay_mode="all-positive"))
        x0 = np.random.default_rng(seed).uniform(0, 40, 4)
        s = sim.Simulator(net, sim.NetState.cold(net, x0), record=False)
        s.run_until(200 * net.cycle)
        assert np.all(s.max_x <= analysis.queue_bound(net, x0))


def test_rmse_study_on_chain(chain):
    study = analysis.rmse_study(chain, x_init=10.0)
    assert study.settled and study.non_increasing()
    assert study.table[-1].max() < 1e-6
