import numpy as np
import pytest

from sigqueue import analysis, oracle
from sigqueue.model import validate


def test_single_link():
    net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=4, n_links=1))
    assert net.n_links == 1 and net.routing == ()
    assert analysis.stability(net).stable


def test_deterministic():
    spec = oracle.RandomNetSpec(seed=11, n_links=6, delay_mode="mixed")
    a, b = oracle.gen_stable_net(spec), oracle.gen_stable_net(spec)
    assert a.inflows == b.inflows and a.capacities == b.capacities and a.routing == b.routing


@pytest.mark.parametrize("mode", oracle.DELAY_MODES)
def test_sweep_valid_and_stable(mode):
    for seed in range(100):
        spec = oracle.RandomNetSpec(seed=seed, n_links=5, delay_mode=mode)
        net = oracle.gen_stable_net(spec)
        assert validate(net).ok
        assert analysis.stability(net).margin >= spec.margin - 1e-12
        R = net.routing_matrix()
        assert np.all(R.sum(axis=1) <= spec.max_row_sum + 1e-12)
        delays = [e.delay for e in net.routing]
        if mode == "all-zero":
            assert all(d == 0 for d in delays)
        elif mode == "all-positive":
            assert all(d > 0 for d in delays)
        for f in net.inflows + net.capacities:
            assert all(b % oracle.GRID == 0 for b in f.breakpoints)


def test_spec_rejects_bad_fields():
    with pytest.raises(ValueError):
        oracle.RandomNetSpec(seed=0, n_links=11)
    with pytest.raises(ValueError):
        oracle.RandomNetSpec(seed=0, delay_mode="sometimes")
    with pytest.raises(ValueError):
        oracle.RandomNetSpec(seed=0, margin=0)


def test_random_query_shape():
    net = oracle.gen_stable_net(oracle.RandomNetSpec(seed=2, n_links=7))
    q = oracle.random_query(np.random.default_rng(0), net)
    assert len(q.lam_tilde) == len(q.c_now) == 7
    assert all(0 <= i < 7 for i in q.zero_set)
