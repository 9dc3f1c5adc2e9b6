import csv
import math

import numpy as np
import pytest
from scipy import stats

from multitype_cp.direct import simulate
from multitype_cp.errors import DomainError, EstimationError, WindowViolation
from multitype_cp.interface import (N_PROBE, WindowPolicy, contact_time_test,
                                    double_arrow_rate, estimate_drift,
                                    mirror_domination_probe, run_heaviside)
from multitype_cp.lattice import Configuration, TorusGeometry
from multitype_cp.payoff import FitnessSpec, PayoffMatrix, register_response

SPEC = FitnessSpec(4.0)
ZERO = PayoffMatrix()
THEOREM = PayoffMatrix(0, 1, 0, 0)


def traces(A, n, T, seed0, W=200, spec=SPEC):
    return [run_heaviside(spec, A, T, seed0 + r, WindowPolicy(W=W)) for r in range(n)]


def edge_at(trace, t):
    i = np.searchsorted(trace.edge_times, t, side="right") - 1
    return int(trace.R[i]), int(trace.L[i])


def test_double_arrow_rate():
    assert double_arrow_rate(4.0, 0.0) == 0.0
    assert double_arrow_rate(4.0, 1.0) == pytest.approx(2 * (math.exp(0.5) - 1))


def test_initial_state():
    tr = run_heaviside(SPEC, ZERO, 0.0, seed=0)
    assert (tr.R[0], tr.L[0], tr.X[0]) == (0, 1, 0.5)
    assert tr.contact_phase[0]
    assert tr.tau[0] == 0.0 and tr.X_tau[0] == 0.5


def test_first_death_at_origin_opens_a_gap():
    found = 0
    for seed in range(200):
        tr = run_heaviside(SPEC, ZERO, 2.0, seed)
        if tr.R.shape[0] > 1 and tr.R[1] == -1 and tr.L[1] == 1:
            assert tr.L[1] - tr.R[1] == 2
            assert tr.sigma[0] == tr.edge_times[1]
            found += 1
    assert found > 0


@pytest.mark.parametrize("A", [ZERO, THEOREM, PayoffMatrix(1, 0.5, 0.2, 0.3),
                               PayoffMatrix(0, 0, 2, 0)])
def test_trace_invariants(A):
    for seed in range(5):
        tr = run_heaviside(SPEC, A, 50.0, seed, WindowPolicy(W=300), audit=True)
        assert tr.audit_violations == 0
        assert np.all(tr.R < tr.L)
        assert np.all(np.diff(tr.edge_times) >= 0)
        sep = tr.sigma
        tau = tr.tau
        # tau_0 = 0 < sigma_1 < tau_1 < sigma_2 < ...
        assert np.all(sep[:tau.shape[0]] > tau[:sep.shape[0]])
        assert np.all(tau[1:] > sep[:tau.shape[0] - 1])
        assert sep.shape[0] in (tau.shape[0] - 1, tau.shape[0])
        # at every contact time the edges touch
        for t, x in zip(tau[1:], tr.X_tau[1:]):
            r, l = edge_at(tr, t)
            assert l - r == 1 and (r + l) / 2 == x


def test_rejects_negative_payoffs_and_other_responses():
    with pytest.raises(DomainError):
        run_heaviside(SPEC, PayoffMatrix(0, -1, 0, 0), 1.0, 0)
    register_response("exp2", lambda x: math.exp(2 * x))
    with pytest.raises(DomainError):
        run_heaviside(FitnessSpec(4.0, "exp2"), ZERO, 1.0, 0)


def test_window_policy_validation():
    with pytest.raises(DomainError):
        WindowPolicy(W=4)
    with pytest.raises(DomainError):
        WindowPolicy(W=100, buffer=60)
    p = WindowPolicy(W=100)
    assert (p.buffer, p.recenter) == (25, 50)


def test_window_violation_carries_trace():
    # the edges wander further than a tiny window allows
    with pytest.raises(WindowViolation) as info:
        run_heaviside(SPEC, ZERO, 500.0, 1, WindowPolicy(W=8))
    tr = info.value.trace
    assert tr is not None and tr.terminal == "window"
    assert tr.t_final < 500.0
    quiet = run_heaviside(SPEC, ZERO, 500.0, 1, WindowPolicy(W=8), raise_on_violation=False)
    assert quiet.terminal == "window"


def test_deterministic_given_seed():
    a = run_heaviside(SPEC, THEOREM, 30.0, 17)
    b = run_heaviside(SPEC, THEOREM, 30.0, 17)
    assert np.array_equal(a.edge_times, b.edge_times) and np.array_equal(a.R, b.R)


def test_csv_export(tmp_path):
    tr = run_heaviside(SPEC, ZERO, 5.0, 2)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "R", "L", "X", "phase"]
    assert len(rows) == tr.edge_times.shape[0] + 1
    assert rows[1][1:] == ["0", "1", "0.5", "contact"]
    for row in rows[1:]:
        r, l = int(row[1]), int(row[2])
        assert row[4] == ("contact" if l - r == 1 else "separated")


def test_symmetric_parameters_have_no_drift():
    A = PayoffMatrix(0.5, 0.5, 0.5, 0.5)
    est = estimate_drift(traces(A, 40, 100.0, 1000))
    assert abs(est.drift) < 3 * est.drift_se
    assert abs(est.compensated) < 3 * est.compensated_se
    assert est.tau_mean > 0 and est.n_excursions > 100


def test_symmetric_increments_symmetric_in_law():
    # relabel-and-reflect: increments and their negatives share one law
    trs = traces(ZERO, 40, 100.0, 2000)
    inc = np.concatenate([t.increments for t in trs])
    assert stats.ks_2samp(inc, -inc).pvalue > 0.001


def test_contact_durations_exponential():
    mean, se, p, d = contact_time_test(traces(THEOREM, 30, 100.0, 3000))
    assert abs(mean - 0.5) < 3 * se
    assert p > 0.001
    assert np.all(d > 0)


def test_estimate_drift_errors():
    with pytest.raises(EstimationError):
        estimate_drift([])
    with pytest.raises(EstimationError):
        estimate_drift([run_heaviside(SPEC, ZERO, 0.0, 0)])


def test_truncated_traces_are_counted():
    trs = traces(ZERO, 3, 30.0, 4000)
    trs.append(run_heaviside(SPEC, ZERO, 500.0, 1, WindowPolicy(W=8), raise_on_violation=False))
    assert estimate_drift(trs).n_truncated >= 1


def test_mirror_probe_empty_set_and_symmetry():
    trs = traces(ZERO, 30, 100.0, 5000)
    rows = mirror_domination_probe(trs, [(), (1,), (1, 2), (1, 2, 3)])
    assert rows[0].p_left == rows[0].p_right == 1.0 and rows[0].gap == 0.0
    for row in rows[1:]:
        assert abs(row.gap) < 4 * row.se
    start = mirror_domination_probe(trs, [tuple(range(1, N_PROBE + 1))], include_start=True)
    assert start[0].p_left > 0
    with pytest.raises(DomainError):
        mirror_domination_probe(trs, [(0,)])
    with pytest.raises(DomainError):
        mirror_domination_probe(trs, [(N_PROBE + 1,)])


def test_mirror_probe_theorem_parameters():
    rows = mirror_domination_probe(traces(THEOREM, 30, 100.0, 6000),
                                   [(1,), (2,), (1, 2), (1, 3)])
    for row in rows:
        assert row.gap > -3 * row.se


def test_edge_matches_independent_two_type_simulation():
    """With zero payoffs the trace edge law matches a full-lattice run.

    The oracle is the direct engine on a ring of 400 sites with 1s on one
    half and 2s on the other; the interface in the middle of the ring is
    far from the second one over the horizon used.
    """
    T, n = 5.0, 150
    spec = FitnessSpec(2.0)
    geo = TorusGeometry((400,))
    states = np.where(np.arange(400) < 200, 1, 2).astype(np.uint8)
    start = Configuration(geo, states)
    ring_R, ring_L = [], []
    for r in range(n):
        st = simulate(start, ZERO, spec, T, seed=r).final.states
        mid = st[100:300]
        ring_R.append(100 + np.flatnonzero(mid == 1).max() - 199)
        ring_L.append(100 + np.flatnonzero(mid == 2).min() - 199)
    tr_R, tr_L = [], []
    for r in range(n):
        r_t, l_t = edge_at(run_heaviside(spec, ZERO, T, 10_000 + r, WindowPolicy(W=100)), T)
        tr_R.append(r_t)
        tr_L.append(l_t)
    for a, b in ((ring_R, tr_R), (ring_L, tr_L)):
        a, b = np.asarray(a, float), np.asarray(b, float)
        se = math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
        assert abs(a.mean() - b.mean()) < 4 * se
        assert stats.ks_2samp(a, b).pvalue > 0.001
