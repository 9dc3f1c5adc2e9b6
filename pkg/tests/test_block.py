import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multitype_cp.block import (a_plus_threshold, cross_region, death_params,
                                invasion_bound, p_death_exact, poisson_upper_tail,
                                rate_bounds, verify_block_mc)
from multitype_cp.errors import DomainError
from multitype_cp.payoff import FitnessSpec, PayoffMatrix


def poisson_tail(n, mean):
    """P(Poisson(mean) >= n) as one minus the CDF below n."""
    return 1.0 - sum(math.exp(-mean) * mean ** k / math.factorial(k) for k in range(n))


@pytest.mark.parametrize("d,size", [(1, 4), (2, 12), (3, 32), (4, 80)])
def test_cross_region_sizes(d, size):
    geo = cross_region(d)
    assert geo.n_plus == size == (d + 1) * 2 ** d
    assert geo.n_minus == 2 ** d
    assert set(geo.lambda_minus) <= set(geo.lambda_plus)
    minus = np.array(geo.lambda_minus)
    for x in geo.lambda_plus:
        dist = np.sqrt(((minus - np.array(x)) ** 2).sum(axis=1))
        assert dist.min() <= 1.0
        # some site of the cube is a lattice neighbor (or x itself lies in it)
        assert np.any(np.abs(minus - np.array(x)).sum(axis=1) <= 1)


def test_cross_region_d1():
    geo = cross_region(1)
    assert geo.lambda_minus == ((0,), (1,))
    assert geo.lambda_plus == ((-1,), (0,), (1,), (2,))


@pytest.mark.parametrize("d", [0, 5])
def test_cross_region_range(d):
    with pytest.raises(DomainError):
        cross_region(d)


def test_death_params_example():
    p = death_params(0.8, 1)
    assert p.a == pytest.approx(0.025, rel=1e-15)
    assert p.T == pytest.approx(math.log(40), rel=1e-15)
    expected = next(n for n in range(1, 100) if poisson_tail(n, math.log(40)) <= 0.025)
    assert p.N == expected == 9


@given(st.floats(0.01, 0.99), st.integers(1, 4))
def test_death_params_inequalities(eps, d):
    p = death_params(eps, d)
    n_plus = (d + 1) * 2 ** d
    assert p.a == pytest.approx(eps / (8 * n_plus))
    assert math.exp(-p.T) == pytest.approx(p.a, rel=1e-12)
    assert poisson_tail(p.N, p.T) <= p.a + 1e-12
    assert poisson_tail(p.N - 1, p.T) > p.a
    assert 2 * p.a * n_plus == pytest.approx(eps / 4)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
def test_death_params_range(eps):
    with pytest.raises(DomainError):
        death_params(eps, 1)


@pytest.mark.parametrize("n,mean", [(0, 3.0), (1, 3.0), (5, 3.0), (9, math.log(40)),
                                    (20, 4.0), (3, 0.0)])
def test_poisson_upper_tail(n, mean):
    assert poisson_upper_tail(n, mean) == pytest.approx(poisson_tail(n, mean), abs=1e-14)


def test_p_death_exact_is_product():
    p = death_params(0.8, 1)
    site = sum(math.exp(-p.T) * p.T ** k / math.factorial(k) for k in range(1, p.N))
    assert p_death_exact(p) == pytest.approx(site ** 4, rel=1e-12)
    assert p_death_exact(p) >= 1 - 0.8 / 4


def test_rate_bounds_examples():
    M1, _ = rate_bounds(FitnessSpec(2.0), 1, PayoffMatrix(4, -1, 0, 0))
    assert M1 == pytest.approx(math.exp(1.5))
    _, M2 = rate_bounds(FitnessSpec(2.0), 1, PayoffMatrix(0, 0, 0.5, 0))
    assert M2 == pytest.approx(2 * math.exp(0.5))
    assert rate_bounds(FitnessSpec(3.0), 2, PayoffMatrix()) == (pytest.approx(0.75), 3.0)


def test_rate_bounds_precondition():
    with pytest.raises(DomainError):
        rate_bounds(FitnessSpec(1.0), 1, PayoffMatrix(0.5, 1.0, 0, 0))
    with pytest.raises(DomainError):
        rate_bounds(FitnessSpec(1.0), 1, PayoffMatrix(-0.5, 0, 0, 0))


def test_threshold_example_holds_with_equality():
    spec = FitnessSpec(2.0)
    N = death_params(0.8, 1).N
    thr = a_plus_threshold(0.8, spec, 1, 0, 0, 0)
    assert thr == pytest.approx(2 * math.log(4 * N * 4 * (2 + 4) / (0.8 * 1)), rel=1e-12)
    M1, M2 = rate_bounds(spec, 1, PayoffMatrix(thr, 0, 0, 0))
    assert invasion_bound(N, 4, M1, M2) == pytest.approx(0.8 / 4, rel=1e-12)
    M1, M2 = rate_bounds(spec, 1, PayoffMatrix(thr + 0.1, 0, 0, 0))
    assert invasion_bound(N, 4, M1, M2) < 0.8 / 4


@given(st.floats(0.05, 0.95), st.floats(0.2, 5.0), st.integers(1, 3),
       st.floats(-2, 0), st.floats(0, 2), st.floats(0, 2))
def test_threshold_monotonicity(eps, lam, d, a12, a21, a22):
    spec = FitnessSpec(lam)
    thr = a_plus_threshold(eps, spec, d, a12, a21, a22)
    N = death_params(eps, d).N
    assert a_plus_threshold(eps, spec, d, a12, a21, a22, N=N + 1) > thr
    # doubling M2 through a21
    m2 = math.exp(max(0.0, a21, a22))
    assert a_plus_threshold(eps, spec, d, a12, math.log(2 * m2), a22, N=N) > thr
    assert a_plus_threshold(eps, FitnessSpec(lam * 1.5), d, a12, a21, a22, N=N) <= thr + 1e-9
    assert a_plus_threshold(min(eps * 1.05, 0.99), spec, d, a12, a21, a22, N=N) <= thr + 1e-9


def test_threshold_decreases_in_epsilon():
    spec = FitnessSpec(2.0)
    lo = a_plus_threshold(0.999, spec, 1, 0, 0, 0)
    hi = a_plus_threshold(0.001, spec, 1, 0, 0, 0)
    assert lo < hi


def test_block_mc_death_event_and_guarantee():
    spec = FitnessSpec(2.0)
    thr = a_plus_threshold(0.8, spec, 1, 0, 0, 0)
    res = verify_block_mc(0.8, spec, 1, PayoffMatrix(), thr, 3000, seed=1)
    assert res.guaranteed and res.threshold == pytest.approx(thr)
    assert abs(res.p_death - res.p_death_exact) < 3 * res.p_death_se
    assert res.p_death >= 1 - 0.8 / 4 - 3 * res.p_death_se
    assert res.p_invade >= 1 - 0.8 - 3 * res.p_invade_se


def test_block_mc_exploratory_flag_and_determinism():
    spec = FitnessSpec(2.0)
    a = verify_block_mc(0.8, spec, 1, PayoffMatrix(), 2.0, 200, seed=4)
    b = verify_block_mc(0.8, spec, 1, PayoffMatrix(), 2.0, 200, seed=4)
    assert not a.guaranteed
    assert a == b


def test_block_mc_invasion_trend():
    spec = FitnessSpec(2.0)
    vals = [verify_block_mc(0.8, spec, 1, PayoffMatrix(), a, 1500, seed=2)
            for a in (2.0, 6.0, 14.0)]
    for lo, hi in zip(vals, vals[1:]):
        assert hi.p_invade > lo.p_invade - 3 * math.hypot(lo.p_invade_se, hi.p_invade_se)
    assert vals[-1].p_invade > vals[0].p_invade + 0.3


def test_block_mc_d2():
    res = verify_block_mc(0.8, FitnessSpec(2.0), 2, PayoffMatrix(), 10.0, 300, seed=3)
    assert res.side == 8
    assert abs(res.p_death - res.p_death_exact) < 4 * res.p_death_se
