import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitype_cp.dual import (ALL_FACTORS, DEATH, DOUBLE, GOOD, SINGLE, LabelSet,
                               build_zeta_events, check_duality, coupled_xi_zeta,
                               coupled_zeta_eta, dual_set, epsilon_rate, forward_states,
                               good_arrow_factors, good_arrow_probability,
                               good_arrow_probability_exact, influence_cone_replay,
                               label_good_arrows, make_zeta_stream, run_eta, run_zeta)
from multitype_cp.errors import DomainError, ResourceError
from multitype_cp.lattice import Configuration, TorusGeometry
from multitype_cp.payoff import FitnessSpec
from multitype_cp.verify import ordered_start

LINE = TorusGeometry((10,))


def config(geo, occupied):
    states = np.zeros(geo.total_sites, dtype=np.uint8)
    for site, kind in occupied.items():
        states[site] = kind
    return Configuration(geo, states)


# the good double arrow 4 -> 5 -> 6 at s = 3 with its two witnesses
WITNESSED = [(1.5, DEATH, 4, -1, -1), (2.5, SINGLE, 5, 4, -1), (3.0, DOUBLE, 5, 6, 4)]


@pytest.mark.parametrize("lam,d,a11,expected", [
    (4.0, 1, 2.0, math.e - 1),
    (1.0, 2, 4.0, (math.e - 1) / 16),
    (2.0, 1, 0.0, 0.0),
])
def test_epsilon_rate(lam, d, a11, expected):
    assert epsilon_rate(FitnessSpec(lam), a11, d) == pytest.approx(expected, rel=1e-12)


def test_epsilon_rate_rejects_negative_a11():
    with pytest.raises(DomainError):
        epsilon_rate(FitnessSpec(1.0), -0.5, 1)


def test_good_arrow_probability_examples():
    assert good_arrow_probability(FitnessSpec(1 / 6), 0.0, 1) == pytest.approx(
        math.exp(-7) / 6, rel=1e-12)
    assert good_arrow_probability(FitnessSpec(1 / 6), 0.0, 1) == pytest.approx(1.5198e-4,
                                                                                rel=1e-4)
    eps = (math.exp(1.0) - 1) / 4
    p = good_arrow_probability(FitnessSpec(1.0), 2.0, 1)
    assert p == pytest.approx(math.exp(-6 * (2 + 4 * eps)), rel=1e-12)
    assert p == pytest.approx(2.0e-10, rel=0.05)


@given(st.floats(0.05, 5.0), st.integers(1, 3), st.floats(0.0, 3.0))
def test_factor_product_is_closed_form(lam, d, a11):
    spec = FitnessSpec(lam)
    factors = good_arrow_factors(spec, a11, d)
    # each Poisson factor evaluated from its own mean
    eps = epsilon_rate(spec, a11, d)
    means = {"death_at_z": 1.0, "arrow_into_z": lam, "no_deaths": 5.0,
             "no_singles": 5.0 * lam, "no_doubles": 6.0 * (2 * d) ** 2 * eps}
    for name, mu in means.items():
        k = 1 if name in ("death_at_z", "arrow_into_z") else 0
        assert factors[name] == pytest.approx(mu ** k * math.exp(-mu) / math.factorial(k),
                                              rel=1e-12)
    closed = good_arrow_probability(spec, a11, d)
    assert math.prod(factors.values()) == pytest.approx(closed, rel=1e-12)
    assert good_arrow_probability_exact(spec, a11, d) == pytest.approx(closed / (2 * d))


def test_stream_counts_match_rates():
    geo = TorusGeometry((200,))
    spec = FitnessSpec(2.0)
    s = build_zeta_events(geo, spec, 1.0, 50.0, seed=0)
    eps = epsilon_rate(spec, 1.0, 1)
    area = geo.total_sites * 50.0
    for kind, rate in ((DEATH, 1.0), (SINGLE, 2.0), (DOUBLE, 4 * eps)):
        mean = rate * area
        assert abs(s.count(kind) - mean) < 4 * math.sqrt(mean)
    assert np.all(np.diff(s.times) >= 0)


def test_stream_is_deterministic():
    geo = TorusGeometry((50,))
    a = build_zeta_events(geo, FitnessSpec(3.0), 1.0, 5.0, seed=11)
    b = build_zeta_events(geo, FitnessSpec(3.0), 1.0, 5.0, seed=11)
    assert a.fingerprint == b.fingerprint


# ---------------------------------------------------------------- zeta rules

@pytest.mark.parametrize("occupied,expected_y", [
    ({5: 1, 4: 1}, 1),   # both ends type 1: the double arrow fires
    ({5: 1}, 0),         # z empty
    ({5: 1, 4: 2}, 0),   # z holds a 2
    ({5: 2, 4: 2}, 0),   # a type 2 never uses double arrows
    ({5: 2, 4: 1}, 0),
])
def test_zeta_double_arrow_rule(occupied, expected_y):
    s = make_zeta_stream(LINE, [(1.0, DOUBLE, 5, 6, 4)], T=2.0)
    out = run_zeta(config(LINE, occupied), s)
    assert out.final[6] == expected_y


@pytest.mark.parametrize("kind", [1, 2])
def test_single_arrow_copies_either_type(kind):
    s = make_zeta_stream(LINE, [(1.0, SINGLE, 5, 6, -1)], T=2.0)
    assert run_zeta(config(LINE, {5: kind}), s).final[6] == kind


def test_single_arrow_needs_empty_target():
    s = make_zeta_stream(LINE, [(1.0, SINGLE, 5, 6, -1)], T=2.0)
    assert run_zeta(config(LINE, {5: 1, 6: 2}), s).final[6] == 2


# ---------------------------------------------------------------- labels

def test_witnessed_double_arrow_is_good():
    labels = label_good_arrows(make_zeta_stream(LINE, WITNESSED))
    assert len(labels) == 1 and labels.n_good == 1
    lab = labels[0]
    assert lab.good and (lab.x, lab.y, lab.z) == (5, 6, 4)
    assert lab.witness_death == 1.5 and lab.witness_arrow == 2.5


def test_early_double_arrow_is_not_good():
    events = [(t - 1.5, k, x, y, z) for t, k, x, y, z in WITNESSED]
    labels = label_good_arrows(make_zeta_stream(LINE, events))
    assert labels.n_good == 0


@pytest.mark.parametrize("extra", [
    (2.2, DEATH, 6, -1, -1),          # death at y
    (2.9, DEATH, 5, -1, -1),          # death at x
    (0.5 + 1.5, DEATH, 4, -1, -1),    # second death at z after the witness
    (1.2, SINGLE, 7, 6, -1),          # single arrow into y
    (2.7, DOUBLE, 3, 4, 2),           # double arrow pointing at z
    (2.0, DEATH, 4, -1, -1),          # event exactly on the window boundary
])
def test_extra_event_spoils_the_label(extra):
    labels = label_good_arrows(make_zeta_stream(LINE, WITNESSED + [extra]))
    assert labels.n_good == 0


def test_events_outside_window_are_ignored():
    extra = [(0.5, DEATH, 6, -1, -1), (3.5, SINGLE, 7, 6, -1), (2.5, DEATH, 8, -1, -1)]
    assert label_good_arrows(make_zeta_stream(LINE, WITNESSED + extra)).n_good == 1


def test_witness_arrow_from_other_neighbor():
    # the arrow into z comes from 3 rather than x: all five factors hold, not good
    events = [WITNESSED[0], (2.5, SINGLE, 3, 4, -1), WITNESSED[2]]
    labels = label_good_arrows(make_zeta_stream(LINE, events))
    assert labels.masks[0] == ALL_FACTORS and labels.masks[0] != GOOD
    assert labels.n_good == 0


def test_double_arrow_with_y_equal_z_is_not_good():
    events = [(1.5, DEATH, 4, -1, -1), (2.5, SINGLE, 5, 4, -1), (3.0, DOUBLE, 5, 4, 4)]
    assert label_good_arrows(make_zeta_stream(LINE, events)).n_good == 0


# ---------------------------------------------------------------- eta

def test_eta_uses_good_arrows_for_type1_only():
    s = make_zeta_stream(LINE, WITNESSED)
    labels = label_good_arrows(s)
    # z is dead and refilled by x, so y receives a 1 through the good arrow
    assert run_eta(config(LINE, {5: 1}), s, labels).final[6] == 1
    assert run_eta(config(LINE, {5: 2}), s, labels).final[6] == 0


def test_eta_without_good_arrows_ignores_doubles():
    s = make_zeta_stream(LINE, [(3.0, DOUBLE, 5, 6, 4)])
    labels = label_good_arrows(s)
    assert labels.n_good == 0
    assert run_eta(config(LINE, {4: 1, 5: 1}), s, labels).final[6] == 0


def test_label_stream_mismatch():
    s = make_zeta_stream(LINE, WITNESSED)
    other = make_zeta_stream(LINE, WITNESSED[:2] + [(3.0, DOUBLE, 5, 6, 4)], T=5.0)
    labels = label_good_arrows(other)
    with pytest.raises(DomainError):
        run_eta(config(LINE, {5: 1}), s, labels)
    with pytest.raises(DomainError):
        dual_set((5, 1.0), s, labels)


# ---------------------------------------------------------------- zeta vs eta

def test_zeta_eta_inclusions_on_random_streams():
    geo = TorusGeometry((100,))
    spec = FitnessSpec(1.0)
    for seed in range(5):
        s = build_zeta_events(geo, spec, 0.5, 20.0, seed)
        labels = label_good_arrows(s)
        lower, upper = ordered_start(geo, np.random.default_rng(seed))
        _, _, rep = coupled_zeta_eta(upper, lower, s, labels)
        assert rep.verified, rep.first_violation


def test_planted_good_arrows_respect_inclusions():
    # a good arrow whose tail is a 1 in both processes
    s = make_zeta_stream(LINE, WITNESSED)
    labels = label_good_arrows(s)
    start = config(LINE, {5: 1, 7: 2})
    ze, et, rep = coupled_zeta_eta(start, start, s, labels)
    assert rep.verified
    assert et[6] == 1 and ze[6] == 1


def test_arbitrary_labels_break_the_inclusions():
    # a 1-arrow with no witnesses lets eta fill y while zeta needs a 1 at z
    s = make_zeta_stream(LINE, [(3.0, DOUBLE, 5, 6, 4)])
    labels = LabelSet.synthetic(s, [True])
    start = config(LINE, {5: 1})
    _, _, rep = coupled_zeta_eta(start, start, s, labels)
    assert not rep.verified
    assert rep.first_violation[1] == 6


def test_zeta_eta_rejects_unordered_start():
    s = make_zeta_stream(LINE, WITNESSED)
    with pytest.raises(DomainError):
        coupled_zeta_eta(config(LINE, {}), config(LINE, {5: 1}), s, label_good_arrows(s))


# ---------------------------------------------------------------- xi vs zeta

def test_xi_zeta_verified():
    geo = TorusGeometry((100,))
    lower, upper = ordered_start(geo, np.random.default_rng(3))
    xi, ze, rep, stream = coupled_xi_zeta(upper, 1.0, FitnessSpec(4.0), 20.0, seed=3,
                                          zeta0=lower)
    assert rep.verified, rep.first_violation
    assert rep.events_checked > 0
    assert np.all(xi.states[ze.states == 1] == 1)
    assert np.all(ze.states[xi.states == 2] == 2)


def test_xi_zeta_preconditions():
    geo = TorusGeometry((20,))
    start = Configuration.product(geo, np.random.default_rng(0))
    with pytest.raises(DomainError):
        coupled_xi_zeta(start, 0.0, FitnessSpec(1.0), 1.0, seed=0)
    with pytest.raises(DomainError):
        coupled_xi_zeta(Configuration.empty(geo), 1.0, FitnessSpec(1.0), 1.0, seed=0,
                        zeta0=Configuration.full(geo))


# ---------------------------------------------------------------- duality

def test_dual_of_empty_window():
    s = make_zeta_stream(LINE, [], T=5.0)
    ds = dual_set((3, 4.0), s, label_good_arrows(s))
    for back in (0.0, 1.0, 4.0):
        assert ds.at(back) == {3}
    assert ds.base == {3}


def test_dual_blocked_by_death():
    s = make_zeta_stream(LINE, [(1.0, DEATH, 3, -1, -1)], T=5.0)
    ds = dual_set((3, 4.0), s, label_good_arrows(s))
    assert ds.at(2.5) == {3}
    assert ds.at(3.5) == frozenset()
    assert ds.base == frozenset()


def test_dual_follows_single_arrow_backward():
    s = make_zeta_stream(LINE, [(1.0, SINGLE, 2, 3, -1)], T=5.0)
    ds = dual_set((3, 4.0), s, label_good_arrows(s))
    assert ds.at(2.5) == {3}
    assert ds.at(3.5) == {2, 3}
    assert not ds.used_one_arrow


def test_dual_crosses_good_arrow():
    s = make_zeta_stream(LINE, WITNESSED, T=5.0)
    ds = dual_set((6, 4.0), s, label_good_arrows(s))
    assert 5 in ds.base and ds.used_one_arrow


def test_cone_replay_examples():
    s = make_zeta_stream(LINE, [], T=5.0)
    labels = label_good_arrows(s)
    start = config(LINE, {3: 2})
    assert influence_cone_replay((3, 4.0), s, labels, start) == 2
    s = make_zeta_stream(LINE, [(1.0, DEATH, 3, -1, -1)], T=5.0)
    labels = label_good_arrows(s)
    assert influence_cone_replay((3, 0.5), s, labels, start) == 2
    assert influence_cone_replay((3, 4.0), s, labels, start) == 0


def test_cone_budget():
    geo = TorusGeometry((100,))
    s = build_zeta_events(geo, FitnessSpec(2.0), 1.0, 10.0, seed=0)
    labels = label_good_arrows(s)
    start = Configuration.full(geo)
    with pytest.raises(ResourceError, match="budget"):
        influence_cone_replay((0, 10.0), s, labels, start, budget=5)
    with pytest.raises(ResourceError):
        check_duality(start, s, labels, [0], [10.0], budget=5)


def test_duality_on_random_stream():
    geo = TorusGeometry((200,))
    s = build_zeta_events(geo, FitnessSpec(2.0), 2.0, 10.0, seed=5)
    labels = label_good_arrows(s)
    rng = np.random.default_rng(5)
    start = Configuration.product(geo, rng)
    sites = rng.integers(0, geo.total_sites, 1000)
    times = rng.uniform(0, 10.0, 1000)
    res = check_duality(start, s, labels, sites, times)
    assert res.ok, res
    assert 0 < res.occupied < res.n_points
    assert res.single_only > 0


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 0.9))
def test_duality_with_arbitrary_one_arrows(seed, p):
    geo = TorusGeometry((60,))
    s = build_zeta_events(geo, FitnessSpec(1.5), 2.0, 6.0, seed)
    rng = np.random.default_rng(seed)
    labels = LabelSet.synthetic(s, rng.random(len(s)) < p)
    start = Configuration.product(geo, rng)
    sites = rng.integers(0, geo.total_sites, 200)
    times = rng.uniform(0, 6.0, 200)
    res = check_duality(start, s, labels, sites, times)
    assert res.ok, res


def test_forward_states_match_run_eta():
    geo = TorusGeometry((80,))
    s = build_zeta_events(geo, FitnessSpec(2.0), 2.0, 8.0, seed=9)
    labels = LabelSet.synthetic(s, np.random.default_rng(9).random(len(s)) < 0.5)
    start = Configuration.product(geo, np.random.default_rng(9))
    final = run_eta(start, s, labels).final
    sites = np.arange(geo.total_sites)
    got = forward_states(start, s, labels, sites, np.full(geo.total_sites, 8.0))
    assert np.array_equal(got, final.states)
