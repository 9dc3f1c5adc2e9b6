"""Verification suites shared by ``mtcp verify`` and the acceptance tests.

Each suite returns a :class:`CriterionResult` with a pass flag and the
statistics behind it.  Defaults are the full-scale settings; ``QUICK`` holds
reduced settings for smoke runs.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import block, direct, dual, experiments, graphical, interface, meanfield
from .coupling import coupled_run
from .errors import WindowViolation
from .lattice import Configuration, TorusGeometry
from .payoff import FitnessSpec, PayoffMatrix
from .seeding import INITIAL, REPLICATE, derived_seed, rng_for


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    stats: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        return f"criterion {self.number:2d} [{self.name}] {'PASS' if self.passed else 'FAIL'}: " \
               f"{self.summary} ({self.seconds:.1f} s)"

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": bool(self.passed),
                "summary": self.summary, "seconds": self.seconds,
                "stats": _plain(self.stats)}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _product(geo, seed, *key, p_occupied=0.5, p_type1=0.5):
    return Configuration.product(geo, rng_for(seed, INITIAL, *key), p_occupied, p_type1)


# ------------------------------------------------------------------ 1 engines

@_timed
def engines(replicates=500, side=64, lam=2.0, T=20.0, seed=1):
    """Final occupied density under both engines, two-sample KS."""
    geo = TorusGeometry.cube(2, side)
    spec = FitnessSpec(lam)
    A = PayoffMatrix.zeros()
    samples = np.array([0.0, T])
    out = {"direct": [], "graphical": []}
    for r in range(replicates):
        s = derived_seed(seed, REPLICATE, 0, r)
        c0 = _product(geo, s)
        out["direct"].append(direct.simulate(c0, A, spec, T, seed=s, sample_times=samples)
                             .occupied_density[-1])
        s = derived_seed(seed, REPLICATE, 1, r)
        c0 = _product(geo, s)
        stream = graphical.build_events(geo, graphical.max_rate(spec, A), T, s)
        out["graphical"].append(graphical.evolve(c0, stream, A, spec, sample_times=samples)
                                .occupied_density[-1])
    a, b = np.array(out["direct"]), np.array(out["graphical"])
    ks = stats.ks_2samp(a, b)
    st = {"ks_statistic": ks.statistic, "ks_p": ks.pvalue, "mean_direct": a.mean(),
          "mean_graphical": b.mean(), "replicates": replicates}
    return CriterionResult(1, "engines", bool(ks.pvalue >= 0.01),
                           f"KS p={ks.pvalue:.3g} (>= 0.01), mean density "
                           f"{a.mean():.4f} vs {b.mean():.4f}", st)


# ------------------------------------------------------------------ 2 coupling

def random_ordered_pair(rng):
    """A pair (A, Abar) satisfying the coupling's sign and order conditions."""
    a11 = rng.uniform(0, 2)
    A = PayoffMatrix(a11, rng.uniform(-2, 0), rng.uniform(0, 2), rng.uniform(0, 2))
    Abar = PayoffMatrix(a11 + rng.uniform(0, 1), rng.uniform(0, 2), rng.uniform(-2, 0),
                        rng.uniform(-2, 0))
    return A, Abar


def ordered_start(geo, rng):
    """Plain and barred starts with more 1s and fewer 2s in the barred one."""
    s = Configuration.product(geo, rng, 0.6, 0.5).states
    b = s.copy()
    u = rng.random(s.shape[0])
    b[(s == 0) & (u < 0.3)] = 1
    b[(s == 2) & (u < 0.2)] = 0
    b[(s == 2) & (u >= 0.2) & (u < 0.4)] = 1
    return Configuration(geo, s), Configuration(geo, b)


@_timed
def coupling(pairs=100, T=20.0, seed=2):
    geos = [TorusGeometry((100,)), TorusGeometry((20, 20))]
    verified = 0
    events = 0
    failures = []
    for p in range(pairs):
        rng = rng_for(seed, REPLICATE, p)
        A, Abar = random_ordered_pair(rng)
        spec = FitnessSpec(rng.uniform(1.0, 4.0))
        ok = True
        for g, geo in enumerate(geos):
            c0, b0 = ordered_start(geo, rng)
            _, _, rep = coupled_run(c0, b0, A, Abar, spec, T, derived_seed(seed, p, g))
            events += rep.events_checked
            if not rep.verified:
                ok = False
                failures.append((p, geo.sides, rep.first_violation))
        verified += ok
    st = {"pairs": pairs, "verified": verified, "events_checked": events,
          "failures": failures}
    return CriterionResult(2, "coupling", verified == pairs,
                           f"{verified}/{pairs} pairs verified on 1D L=100 and 20x20, "
                           f"{events} events checked", st)


# ------------------------------------------------------------------ 3 zeta / eta

@_timed
def zeta_couplings(runs=50, lam=4.0, a11=1.0, L=100, T=20.0, rate_T=1000.0, seed=3):
    spec = FitnessSpec(lam)
    geo = TorusGeometry((L,))
    xz_ok = 0
    xz_events = 0
    for r in range(runs):
        c0 = _product(geo, seed, 0, r, p_occupied=0.7)
        _, _, rep, _ = dual.coupled_xi_zeta(c0, a11, spec, T, derived_seed(seed, 0, r))
        xz_ok += rep.verified
        xz_events += rep.events_checked

    # induced double-arrow rate over a long window
    stream = graphical.build_events(geo, spec(a11), rate_T, derived_seed(seed, 1), with_V=True)
    zs = dual.zeta_view(stream, spec, a11)
    n_double = zs.count(dual.DOUBLE)
    exposure = geo.total_sites * geo.degree ** 2 * rate_T
    eps_hat = n_double / exposure
    eps = dual.epsilon_rate(spec, a11, geo.d)
    eps_se = math.sqrt(n_double) / exposure
    eps_z = (eps_hat - eps) / eps_se

    ze_ok = 0
    n_good = 0
    n_doubles = 0
    for r in range(runs):
        zst = dual.build_zeta_events(geo, spec, a11, T, derived_seed(seed, 2, r))
        labels = dual.label_good_arrows(zst)
        n_good += labels.n_good
        n_doubles += len(labels)
        c0 = _product(geo, seed, 2, r, p_occupied=0.7)
        _, _, rep = dual.coupled_zeta_eta(c0, c0, zst, labels)
        ze_ok += rep.verified
    expected_good = n_doubles * dual.good_arrow_probability_exact(spec, a11, geo.d)
    passed = xz_ok == runs and ze_ok == runs and abs(eps_z) <= 3
    st = {"xi_zeta_verified": xz_ok, "xi_zeta_events": xz_events, "zeta_eta_verified": ze_ok,
          "eps": eps, "eps_hat": eps_hat, "eps_se": eps_se, "eps_z": eps_z,
          "doubles_in_rate_window": n_double, "good_arrows": n_good,
          "doubles_labeled": n_doubles, "expected_good": expected_good}
    return CriterionResult(3, "zeta-couplings", passed,
                           f"xi/zeta {xz_ok}/{runs}, zeta/eta {ze_ok}/{runs}, "
                           f"eps_hat={eps_hat:.5g} vs eps={eps:.5g} (z={eps_z:+.2f}), "
                           f"{n_good} good arrows among {n_doubles} doubles", st)


# ------------------------------------------------------------------ 4 good arrows

@_timed
def good_arrow(windows=10 ** 7, lam=1.0 / 6.0, d=1, a11=0.1, seed=4):
    spec = FitnessSpec(lam)
    est = dual.sample_windows(spec, a11, d, windows, seed)
    closed = dual.good_arrow_probability(spec, a11, d)
    exact = dual.good_arrow_probability_exact(spec, a11, d)
    p, se, k = est.good
    pj, sej, kj = est.joint
    z_literal = (p - closed) / se if se > 0 else math.inf
    z_exact = (p - exact) / se if se > 0 else math.inf
    z_joint = (pj - closed) / sej if sej > 0 else math.inf
    factors = {}
    f_ok = True
    for name, value in dual.good_arrow_factors(spec, a11, d).items():
        q, qse, _ = est.factor(name)
        rel = abs(q - value) / value
        factors[name] = {"estimate": q, "exact": value, "rel_error": rel, "se": qse}
        f_ok &= rel <= 0.01
    freq_ok = abs(z_literal) <= 3
    st = {"windows": windows, "good": k, "frequency": p, "se": se, "closed_form": closed,
          "z_vs_closed_form": z_literal, "exact_with_tail_at_x": exact,
          "z_vs_exact": z_exact, "joint_frequency": pj, "joint_z_vs_closed_form": z_joint,
          "factors": factors}
    return CriterionResult(4, "good-arrow", bool(freq_ok and f_ok),
                           f"good frequency {p:.4g}+-{se:.2g} vs closed form {closed:.4g} "
                           f"(z={z_literal:+.1f}); vs closed/(2d) {exact:.4g} (z={z_exact:+.1f}); "
                           f"five-factor joint {pj:.4g} (z={z_joint:+.1f}); factors "
                           f"{'all' if f_ok else 'not all'} within 1%", st)


# ------------------------------------------------------------------ 5 duality

@_timed
def duality(runs=20, points=500, L=200, T=10.0, lam=2.0, a11=2.0, synthetic_p=0.5, seed=5):
    spec = FitnessSpec(lam)
    geo = TorusGeometry((L,))
    totals = {"points": 0, "occupied": 0, "dual_misses": 0, "replay_mismatches": 0,
              "single_only": 0, "single_only_mismatches": 0, "good_arrows": 0}
    stress = {"points": 0, "dual_misses": 0, "replay_mismatches": 0,
              "single_only_mismatches": 0}
    for r in range(runs):
        zst = dual.build_zeta_events(geo, spec, a11, T, derived_seed(seed, 0, r))
        labels = dual.label_good_arrows(zst)
        c0 = _product(geo, seed, 0, r)
        rng = rng_for(seed, REPLICATE, r)
        sites = rng.integers(0, geo.total_sites, points)
        times = rng.uniform(0, T, points)
        chk = dual.check_duality(c0, zst, labels, sites, times)
        totals["points"] += chk.n_points
        totals["occupied"] += chk.occupied
        totals["dual_misses"] += chk.dual_misses
        totals["replay_mismatches"] += chk.replay_mismatches
        totals["single_only"] += chk.single_only
        totals["single_only_mismatches"] += chk.single_only_mismatches
        totals["good_arrows"] += labels.n_good
        fake = dual.LabelSet.synthetic(zst, rng.random(len(zst)) < synthetic_p)
        chk = dual.check_duality(c0, zst, fake, sites, times)
        stress["points"] += chk.n_points
        stress["dual_misses"] += chk.dual_misses
        stress["replay_mismatches"] += chk.replay_mismatches
        stress["single_only_mismatches"] += chk.single_only_mismatches
    passed = (totals["dual_misses"] == 0 and totals["replay_mismatches"] == 0
              and totals["single_only_mismatches"] == 0 and stress["dual_misses"] == 0
              and stress["replay_mismatches"] == 0 and stress["single_only_mismatches"] == 0)
    st = {"real_labels": totals, "synthetic_labels": stress}
    return CriterionResult(5, "duality", passed,
                           f"{totals['points']} points ({totals['occupied']} occupied): "
                           f"{totals['dual_misses']} dual misses, "
                           f"{totals['replay_mismatches']} replay mismatches; synthetic-label "
                           f"stress {stress['dual_misses']}/{stress['replay_mismatches']}", st)


# ------------------------------------------------------------------ 6 interface

def _interface_traces(spec, A, replicates, T, seed, W):
    traces = []
    for r in range(replicates):
        s = derived_seed(seed, REPLICATE, r)
        try:
            traces.append(interface.run_heaviside(spec, A, T, s,
                                                  interface.WindowPolicy(W=W)))
        except WindowViolation as exc:
            traces.append(exc.trace)
    return traces


@_timed
def interface_drift(replicates=200, T=300.0, lam=4.0, W=500, seed=6):
    spec = FitnessSpec(lam)
    main = _interface_traces(spec, PayoffMatrix(0, 1, 0, 0), replicates, T, seed, W)
    ctrl = _interface_traces(spec, PayoffMatrix(0, 1, 1, 0), replicates, T, seed + 1, W)
    em = interface.estimate_drift(main)
    ec = interface.estimate_drift(ctrl)
    mean, se, ks_p, durations = interface.contact_time_test(main)
    z_mean = (mean - 0.5) / se
    pos = em.compensated_ci[0] > 0
    ctrl_zero = ec.compensated_ci[0] <= 0 <= ec.compensated_ci[1]
    contact_ok = abs(z_mean) <= 3 and ks_p >= 0.01
    st = {"drift_raw": em.drift, "drift_raw_ci": em.drift_ci,
          "drift_compensated": em.compensated, "drift_compensated_ci": em.compensated_ci,
          "control_raw": ec.drift, "control_raw_ci": ec.drift_ci,
          "control_compensated": ec.compensated, "control_compensated_ci": ec.compensated_ci,
          "excursions": em.n_excursions, "control_excursions": ec.n_excursions,
          "truncated": em.n_truncated + ec.n_truncated,
          "contact_mean": mean, "contact_se": se, "contact_z": z_mean, "ks_p": ks_p,
          "contacts": int(durations.shape[0])}
    lo, hi = em.compensated_ci
    clo, chi = ec.compensated_ci
    return CriterionResult(
        6, "interface", bool(pos and ctrl_zero and contact_ok),
        f"drift {em.compensated:.4f} CI ({lo:.4f}, {hi:.4f}) [raw {em.drift:.4f} CI "
        f"({em.drift_ci[0]:.4f}, {em.drift_ci[1]:.4f})]; control CI ({clo:.4f}, {chi:.4f}); "
        f"contact mean {mean:.4f} (z={z_mean:+.2f}), KS p={ks_p:.3g}", st)


# ------------------------------------------------------------------ 7 block bounds

@_timed
def block_bounds(epsilon=0.8, lam=2.0, d=1, trials=10 ** 4, seed=7):
    spec = FitnessSpec(lam)
    params = block.death_params(epsilon, d)
    tail = block.poisson_upper_tail(params.N, params.T)
    tail_prev = block.poisson_upper_tail(params.N - 1, params.T)
    exact_ok = (math.isclose(math.exp(-params.T), params.a, rel_tol=1e-12)
                and tail <= params.a < tail_prev)
    A = PayoffMatrix(0, 0, 0, 0)
    thr = block.a_plus_threshold(epsilon, spec, d, A.a12, A.a21, A.a22)
    mc = block.verify_block_mc(epsilon, spec, d, A, thr, trials, seed)
    z_death = (mc.p_death - mc.p_death_exact) / mc.p_death_se
    death_ok = abs(z_death) <= 3
    inv_ok = mc.p_invade >= 0.2 - 3 * mc.p_invade_se
    st = {"a": params.a, "T": params.T, "N": params.N, "tail_at_N": tail,
          "tail_at_N_minus_1": tail_prev, "threshold": thr, "p_death": mc.p_death,
          "p_death_se": mc.p_death_se, "p_death_exact": mc.p_death_exact, "z_death": z_death,
          "p_invade": mc.p_invade, "p_invade_se": mc.p_invade_se}
    return CriterionResult(
        7, "block-bounds", bool(exact_ok and death_ok and inv_ok),
        f"a={params.a:.4g}, T={params.T:.4f}, N={params.N}; p_death {mc.p_death:.4f} vs "
        f"{mc.p_death_exact:.4f} (z={z_death:+.2f}); p_invade {mc.p_invade:.4f} at "
        f"a11={thr:.3f}", st)


# ------------------------------------------------------------------ 8 lambda_c bracket

def survival_probability(lam, L=400, T=200.0, replicates=200, seed=8):
    geo = TorusGeometry((L,))
    spec = FitnessSpec(lam)
    A = PayoffMatrix.zeros()
    alive = 0
    for r in range(replicates):
        traj = direct.simulate(Configuration.full(geo), A, spec, T,
                               seed=derived_seed(seed, REPLICATE, r),
                               sample_times=np.array([0.0, T]))
        alive += traj.n1[-1] > 0
    return alive / replicates


@_timed
def lambda_c(low=2.0, high=4.5, L=400, T=200.0, replicates=200, seed=8):
    p_low = survival_probability(low, L, T, replicates, seed)
    p_high = survival_probability(high, L, T, replicates, seed + 1)
    st = {"lambda_low": low, "survival_low": p_low, "lambda_high": high,
          "survival_high": p_high}
    return CriterionResult(8, "lambda-c", bool(p_low < 0.1 and p_high > 0.9),
                           f"survival {p_low:.3f} at lambda={low}, {p_high:.3f} at "
                           f"lambda={high}", st)


# ------------------------------------------------------------------ 9 figures

def cochran_armitage(successes, totals, scores):
    """One-sided p-value for an increasing trend in binomial proportions."""
    s = np.asarray(successes, float)
    n = np.asarray(totals, float)
    x = np.asarray(scores, float)
    N = n.sum()
    pbar = s.sum() / N
    if pbar in (0.0, 1.0):
        return 1.0, 0.0
    xbar = (n * x).sum() / N
    t = (x * (s - n * pbar)).sum()
    var = pbar * (1 - pbar) * ((n * (x - xbar) ** 2).sum())
    z = t / math.sqrt(var)
    return float(stats.norm.sf(z)), z


@_timed
def figures(side=100, lam=4.0, T=300.0, replicates=20, sweep_side=30, sweep_T=100.0,
            sweep_grid=(-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0), sweep_replicates=20, seed=9):
    base = experiments.ExperimentConfig(lam=lam, sides=(side, side), horizon=T,
                                        replicates=replicates, seed=seed)
    dens = {}
    outcomes = {}
    for a in (2.0, -2.0):
        cfg = base.with_value("a11", a).with_value("a22", a)
        res = experiments.sweep(cfg, "lam", [lam])
        dens[a] = res.per_run[0, 0, :, 2]
        outcomes[a] = dict(zip(experiments.OUTCOMES, res.counts[0, 0].tolist()))
    bp, bm = dens[2.0], dens[-2.0]
    gap = bm.mean() - bp.mean()
    gap_se = math.sqrt(bp.var(ddof=1) / bp.size + bm.var(ddof=1) / bm.size)
    coexist = outcomes[-2.0][experiments.COEXISTENCE]
    a_ok = gap >= 3 * gap_se and coexist > replicates / 2

    scfg = experiments.ExperimentConfig(lam=lam, sides=(sweep_side, sweep_side),
                                        horizon=sweep_T, replicates=sweep_replicates,
                                        seed=seed + 1)
    sw = experiments.sweep(scfg, "a11", sweep_grid)
    wins = sw.counts[:, 0, 0]
    done = sw.counts[:, 0].sum(axis=1)
    p_trend, z_trend = cochran_armitage(wins, done, sweep_grid)
    frac = wins / done
    drops = []
    for i in range(len(frac) - 1):
        if frac[i + 1] < frac[i]:
            pooled = (wins[i] + wins[i + 1]) / (done[i] + done[i + 1])
            se = math.sqrt(max(pooled * (1 - pooled), 1e-12) * (1 / done[i] + 1 / done[i + 1]))
            drops.append((i, float(frac[i] - frac[i + 1]), se))
    noise_ok = all(drop <= 2 * se for _, drop, se in drops)
    b_ok = p_trend <= 0.05 and noise_ok and not sw.failures
    st = {"boundary_plus": bp.mean(), "boundary_plus_se": bp.std(ddof=1) / math.sqrt(bp.size),
          "boundary_minus": bm.mean(),
          "boundary_minus_se": bm.std(ddof=1) / math.sqrt(bm.size), "gap": gap,
          "gap_se": gap_se, "outcomes_plus": outcomes[2.0], "outcomes_minus": outcomes[-2.0],
          "sweep_grid": list(sweep_grid), "type1_wins": wins.tolist(),
          "trend_p": p_trend, "trend_z": z_trend, "drops": drops, "lambda": lam}
    return CriterionResult(
        9, "figures", bool(a_ok and b_ok),
        f"(a) boundary {bp.mean():.4f} (+2) vs {bm.mean():.4f} (-2), gap {gap / gap_se:.1f} SE, "
        f"-2 coexistence {coexist}/{replicates}; (b) Type1Wins {wins.tolist()}, "
        f"trend p={p_trend:.2g}", st)


# ------------------------------------------------------------------ 10 mean field

@_timed
def meanfield_checks(seed=10):
    rng = rng_for(seed, REPLICATE)
    worst_simplex = 0.0
    worst_negative = 0.0
    for _ in range(20):
        A = rng.uniform(-3, 3, (2, 2))
        u0 = rng.dirichlet([1.0, 1.0])
        tr = meanfield.integrate(u0, A, 10.0)
        worst_simplex = max(worst_simplex, float(np.abs(tr.u.sum(axis=1) - 1).max()))
        worst_negative = min(worst_negative, float(tr.u.min()))
    logi = np.array([[1.0, 1.0], [0.0, 0.0]])
    tr = meanfield.integrate([0.1, 0.9], logi, 10.0, dt=1e-3)
    logistic_err = float(np.abs(tr.u[:, 0] - meanfield.logistic(0.1, tr.times)).max())
    errs = []
    for h in (0.2, 0.1, 0.05):
        t = meanfield.integrate([0.1, 0.9], logi, 4.0, dt=h)
        errs.append(abs(t.u[-1, 0] - meanfield.logistic(0.1, 4.0)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    passed = (worst_simplex <= 1e-9 and worst_negative >= -1e-9 and logistic_err <= 1e-6
              and all(12 <= r <= 20 for r in ratios))
    st = {"simplex_error": worst_simplex, "min_component": worst_negative,
          "logistic_error": logistic_err, "step_halving_errors": errs, "ratios": ratios}
    return CriterionResult(10, "meanfield", bool(passed),
                           f"simplex error {worst_simplex:.1e}, logistic error "
                           f"{logistic_err:.1e}, step-halving ratios "
                           f"{ratios[0]:.2f}, {ratios[1]:.2f}", st)


SUITES = {
    "engines": engines,
    "coupling": coupling,
    "zeta": zeta_couplings,
    "good-arrow": good_arrow,
    "duality": duality,
    "interface": interface_drift,
    "bounds": block_bounds,
    "lambda-c": lambda_c,
    "figures": figures,
    "meanfield": meanfield_checks,
}

QUICK = {
    "engines": {"replicates": 60, "side": 32},
    "coupling": {"pairs": 10},
    "zeta": {"runs": 5, "rate_T": 200.0},
    "good-arrow": {"windows": 10 ** 6},
    "duality": {"runs": 2},
    "interface": {"replicates": 20, "T": 100.0},
    "bounds": {"trials": 2000},
    "lambda-c": {"replicates": 20, "L": 100, "T": 100.0},
    "figures": {"side": 40, "T": 100.0, "replicates": 6, "sweep_replicates": 8},
    "meanfield": {},
}


def run_suite(name, quick=False):
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](**(QUICK[name] if quick else {}))
