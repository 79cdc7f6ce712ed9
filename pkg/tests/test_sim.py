import numpy as np
import pytest
from hypothesis import given, strategies as st

from sigqueue import analysis, oracle, sim
from sigqueue.model import Network, RoutingEntry
from sigqueue.pwc import FLOW_EPS, PwcFunction, integrate

T = 20000


def one_link(lam, cap):
    return Network(T, (lam,), (cap,))


def mass_balance(net, traj, init):
    """Arrivals minus (queue growth + in-transit growth + exits), in vehicles."""
    a, b = traj.start, traj.end
    R = net.routing_matrix()
    exits = sum((1 - R[j].sum()) * traj.z_function(j).integrate(a, b)
                for j in range(net.n_links))
    arrivals = sum(integrate(f, a, b) for f in net.inflows)
    stored = traj.x[-1].sum() - traj.x[0].sum()
    transit = sim.in_transit(net, traj.final) - sim.in_transit(net, init)
    return arrivals - stored - transit - exits


class TestEffectiveInflow:
    def test_no_delays(self, chain):
        st_ = sim.NetState.cold(chain, 0.0, 0)
        assert np.allclose(sim.effective_inflow(chain, st_), [0.5, 0.0])

    def test_history_term(self):
        net = Network(T, (PwcFunction.constant(0.1, T), PwcFunction.constant(0.3, T)),
                      (PwcFunction.constant(5.0, T),) * 2, (RoutingEntry(0, 1, 0.5, 2000),))
        beta = (PwcFunction((-2000,), (4.0,), 2000, False), None)
        lt = sim.effective_inflow(net, sim.NetState(0, np.zeros(2), beta))
        assert lt[1] == pytest.approx(0.3 + 2.0)

    def test_cold_start(self):
        net = Network(T, (PwcFunction.constant(0.1, T), PwcFunction.constant(0.3, T)),
                      (PwcFunction.constant(5.0, T),) * 2, (RoutingEntry(0, 1, 0.5, 2000),))
        lt = sim.effective_inflow(net, sim.NetState.cold(net, 0.0, 0))
        assert np.allclose(lt, [0.1, 0.3])

    def test_short_history(self):
        net = Network(T, (PwcFunction.constant(0.1, T),) * 2, (PwcFunction.constant(5.0, T),) * 2,
                      (RoutingEntry(0, 1, 0.5, 2000),))
        beta = (PwcFunction((-500,), (4.0,), 500, False), None)
        with pytest.raises(sim.HistoryError):
            sim.effective_inflow(net, sim.NetState(0, np.zeros(2), beta))


class TestSimulate:
    def test_empty_system(self):
        net = one_link(PwcFunction.constant(0.0, T), PwcFunction.constant(1.0, T))
        tr = sim.simulate(net, sim.NetState.cold(net, 0.0), 5 * T)
        assert np.all(tr.x == 0) and np.all(tr.z == 0)

    def test_single_green_hand_solution(self, single_green):
        tr = sim.simulate(single_green, sim.NetState.cold(single_green, 5.0), T)
        x = tr.x_curve(0)
        assert x(10000 / 3) == pytest.approx(0.0, abs=1e-12)
        assert x(1000) == pytest.approx(5 - 1.5, abs=1e-12)
        assert x(7000) == 0.0
        assert x(15000) == pytest.approx(2.5, abs=1e-12)
        assert x(T) == pytest.approx(5.0, abs=1e-12)
        z = tr.z_function(0)
        assert z(1000) == 2.0 and z(5000) == 0.5 and z(12000) == 0.0

    def test_resume_matches_single_run(self, single_green):
        init = sim.NetState.cold(single_green, 3.0)
        whole = sim.simulate(single_green, init, 3 * T)
        s = sim.Simulator(single_green, init)
        for t in (7000, 20000, 41000, 3 * T):
            s.run_until(t)
        assert np.allclose(s.x, whole.x[-1], atol=1e-12)

    def test_horizon_before_start(self, single_green):
        with pytest.raises(ValueError):
            sim.simulate(single_green, sim.NetState.cold(single_green, 0.0, 100), 50)

    def test_negative_initial_queue(self, single_green):
        with pytest.raises(ValueError):
            sim.NetState.cold(single_green, -1.0)

    @pytest.mark.parametrize("mode", oracle.DELAY_MODES)
    def test_mass_balance(self, mode):
        for seed in range(5):
            net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=6, delay_mode=mode))
            init = sim.NetState.cold(net, np.linspace(0, 5, 6), 0)
            tr = sim.simulate(net, init, 10 * net.cycle)
            assert abs(mass_balance(net, tr, init)) < 1e-9
            assert np.all(tr.x >= 0)

    @given(st.integers(0, 5000))
    def test_ordered_inputs_give_ordered_outputs(self, seed):
        rng = np.random.default_rng(seed)
        net = oracle.gen_stable_net(oracle.RandomNetSpec(
            seed=seed, n_links=4, delay_mode=oracle.DELAY_MODES[seed % 3]))
        xa = rng.uniform(0, 5, 4)
        xb = xa + rng.uniform(0, 3, 4)
        H = 5 * net.cycle
        ta = sim.simulate(net, sim.NetState.cold(net, xa), H)
        tb = sim.simulate(net, sim.NetState.cold(net, xb), H)
        for i in range(4):
            assert analysis.curve_dominance(ta.x_curve(i), tb.x_curve(i), 0, H) <= 1e-9
            assert analysis.pwc_dominance(ta.z_function(i), tb.z_function(i), 0, H) <= 1e-9

    def test_outflow_non_increasing_within_windows(self):
        for seed in range(10):
            net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=6))
            tr = sim.simulate(net, sim.NetState.cold(net, np.full(6, 4.0)), 5 * net.cycle)
            pts = sorted({b for f in net.inflows + net.capacities for b in f.breakpoints})
            cuts = sorted({k * net.cycle + p for k in range(6) for p in pts})
            win = np.searchsorted(cuts, tr.times, side="right")
            for k in range(1, len(tr.times)):
                if win[k] == win[k - 1]:
                    assert np.all(tr.z[k] <= tr.z[k - 1] + FLOW_EPS)

    def test_zero_set_windows_ok(self):
        for seed in range(10):
            net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=6,
                                                             delay_mode="mixed"))
            tr = sim.simulate(net, sim.NetState.cold(net, 2.0), 10 * net.cycle)
            assert tr.windows.ok and tr.windows.windows > 0

    def test_bounded_over_long_horizon(self):
        for seed in range(4):
            net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=seed, n_links=5,
                                                             delay_mode="mixed"))
            x0 = np.full(5, 30.0)
            s = sim.Simulator(net, sim.NetState.cold(net, x0), record=False)
            s.run_until(200 * net.cycle)
            assert np.all(s.max_x <= analysis.queue_bound(net, x0))

    def test_window_observer(self, single_green):
        got = []
        sim.add_window_observer(got.append)
        try:
            sim.simulate(single_green, sim.NetState.cold(single_green, 1.0), 2 * T)
        finally:
            sim.remove_window_observer(got.append)
        assert len(got) == 1 and got[0].ok


class TestEuler:
    def test_empty(self):
        net = one_link(PwcFunction.constant(0.0, T), PwcFunction.constant(1.0, T))
        eu = sim.euler_oracle(net, sim.NetState.cold(net, 0.0), T, 10.0)
        assert np.all(eu.x == 0)

    def test_single_green_matches_exact(self, single_green):
        init = sim.NetState.cold(single_green, 5.0)
        eu = sim.euler_oracle(single_green, init, 5 * T, 1.0)
        ex = sim.simulate(single_green, init, 5 * T)
        c = ex.x_curve(0)
        gap = max(abs(c(t) - v) for t, v in zip(eu.times[::50], eu.x[::50, 0]))
        assert gap <= 5e-2

    def test_delay_must_be_step_multiple(self):
        net = Network(T, (PwcFunction.constant(0.1, T),) * 2, (PwcFunction.constant(5.0, T),) * 2,
                      (RoutingEntry(0, 1, 0.5, 15),))
        with pytest.raises(ValueError):
            sim.euler_oracle(net, sim.NetState.cold(net, 0.0), T, 10.0)


class TestAdaptiveGreen:
    def test_split_by_peak_queue(self):
        assert sim.proportional_split([3.0, 1.0], 10000, [5000, 5000]) == [7500, 2500]

    def test_symmetric(self):
        assert sim.proportional_split([2.0, 2.0], 10000, [3000, 7000]) == [5000, 5000]

    def test_all_zero_keeps_previous(self):
        assert sim.proportional_split([0.0, 0.0], 10000, [3000, 7000]) == [3000, 7000]

    def test_minimum_one_tick(self):
        g = sim.proportional_split([1000.0, 0.0, 0.0], 10, [4, 3, 3])
        assert sum(g) == 10 and min(g) >= 1

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=6), st.integers(6, 50000))
    def test_budget_preserved(self, w, budget):
        g = sim.proportional_split(w, budget, [budget // len(w)] * len(w))
        if sum(w) > 0:
            assert sum(g) == budget and min(g) >= 1

    def test_ungrouped_links_keep_green(self, single_green):
        tr, hist = sim.adaptive_green(single_green, sim.NetState.cold(single_green, 5.0), 4 * T)
        assert all(row == [10000] for row in hist)
        plain = sim.simulate(single_green, sim.NetState.cold(single_green, 5.0), 4 * T)
        assert np.allclose(tr.x[-1], plain.x[-1])

    def test_group_shares_budget(self):
        from sigqueue.model import CapacityProfile

        profs = (CapacityProfile(2.0, 0, 10000, T), CapacityProfile(2.0, 10000, 10000, T))
        net = Network(T, (PwcFunction.constant(0.6, T), PwcFunction.constant(0.2, T)),
                      tuple(p.to_pwc() for p in profs), (), profs, ("a", "a"))
        _, hist = sim.adaptive_green(net, sim.NetState.cold(net, 0.0), 6 * T)
        assert all(sum(row) == 20000 for row in hist)
        assert hist[-1][0] > hist[-1][1]


def test_trajectory_csv_round_trip(tmp_path, chain):
    tr = sim.simulate(chain, sim.NetState.cold(chain, 2.0), 2 * T)
    p = tmp_path / "tr.csv"
    sim.write_trajectory_csv(tr, p)
    back = sim.read_trajectory_csv(p)
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.x, tr.x) and np.array_equal(back.z, tr.z)
    sim.write_events_csv(tr, tmp_path / "ev.csv")
    assert (tmp_path / "ev.csv").read_text().startswith("t_ms,kind,link")
