"""One-dimensional Heaviside experiment with the simplified representation.

Per site ``x`` the event classes and their rates are

==========  =====  ==========================================================
class       rate   effect
==========  =====  ==========================================================
death       1      ``x`` becomes empty
single +    lam/2  occupied ``x`` fills an empty ``x + 1`` with its type
single -    lam/2  same towards ``x - 1``
11 +        e11    ``x - 1``, ``x`` both 1, ``x + 1`` empty: ``x + 1`` becomes 1
11 -        e11    mirror image
22 +, 22 -  e22    as 11 with type 2
12          e12    ``x + 1`` is 2, ``x`` is 1, ``x - 1`` empty: ``x - 1`` becomes 1
21          e21    ``x - 1`` is 1, ``x`` is 2, ``x + 1`` empty: ``x + 1`` becomes 2
==========  =====  ==========================================================

with ``e_ij = lam (exp(a_ij / 2) - 1) / 2``.  Only a window of ``2W + 1``
sites around the interface is simulated.  Sites outside it do not exist.
When the midpoint drifts more than ``W / 2`` from the window center the
window is shifted and the new sites take the type of their half-line.  If
either edge comes within ``buffer`` sites of the window boundary the run
stops with :class:`WindowViolation`.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from .errors import DomainError, EstimationError, WindowViolation
from .seeding import SIMPLIFIED_1D, rng_for

RUNNING, DONE, FULL, VIOLATION, EXTINCT = 0, 1, 2, 3, 4
N_PROBE = 6

# scalar kernel state: t, lo, R, L, phase, n_edges, n_exc, audit_violations,
# integral of the drift of X since time 0
_T, _LO, _R, _L, _PHASE, _NE, _NX, _AUD, _ACC = range(9)
N_EXC_COLS = 10
CONTACT, SEPARATED = 1, 0


def double_arrow_rate(lam, a):
    return lam * (math.exp(a / 2.0) - 1.0) / 2.0


@dataclass(frozen=True)
class WindowPolicy:
    W: int = 500
    buffer: int = None
    recenter: int = None

    def __post_init__(self):
        if self.W < 8:
            raise DomainError("window half-width must be at least 8")
        if self.buffer is None:
            object.__setattr__(self, "buffer", self.W // 4)
        if self.recenter is None:
            object.__setattr__(self, "recenter", self.W // 2)
        if not 0 < self.buffer < self.W - self.recenter:
            raise DomainError("buffer must be positive and leave room for re-centering")


@njit(cache=True)
def _probe_masks(st, r, l, n):
    m1 = 0
    m2 = 0
    for k in range(1, N_PROBE + 1):
        if r - k >= 0 and st[r - k] == 1:
            m1 |= 1 << (k - 1)
        if l + k < n and st[l + k] == 2:
            m2 |= 1 << (k - 1)
    return m1, m2


@njit(cache=True)
def _second_edges(st, r, l, n):
    r2 = -1
    for j in range(r - 1, -1, -1):
        if st[j] == 1:
            r2 = j
            break
    l2 = -1
    for j in range(l + 1, n):
        if st[j] == 2:
            l2 = j
            break
    return r2, l2


@njit(cache=True)
def _ordered(st, n):
    seen2 = False
    for j in range(n):
        if st[j] == 2:
            seen2 = True
        elif st[j] == 1 and seen2:
            return False
    return True


@njit(cache=True)
def _drift(r, l, r2, l2, half_lam, e11, e22):
    """Instantaneous drift of X = (R + L) / 2 given the edges and second edges.

    R steps up at rate lam/2 (+ e11 if R - 1 holds a 1) while separated and
    drops to R2 at rate 1; L mirrors this with e22.
    """
    sep = 1.0 if l - r > 1 else 0.0
    up = (half_lam + (e11 if r2 == r - 1 else 0.0)) * sep
    down = (half_lam + (e22 if l2 == l + 1 else 0.0)) * sep
    return 0.5 * (up - (r - r2)) + 0.5 * ((l2 - l) - down)


@njit(cache=True)
def _kernel(st, sc, rng, t_end, rates, W, buffer, recenter, edge_log, exc_log, audit,
            class_counts, half_lam, e11, e22):
    """Advance the window process.  Returns a status code.

    edge_log rows: (t, R, L) in absolute coordinates, one per edge change.
    exc_log rows: (sigma, tau, X_tau, R_sig-, L_sig-, R2_sig-, L2_sig-,
    mask1_tau, mask2_tau, drift integral at tau) for each excursion, filled
    at sigma then at tau.
    """
    n = st.shape[0]
    total_site = rates[-1]
    total = n * total_site
    t = sc[_T]
    lo = np.int64(sc[_LO])
    r = np.int64(sc[_R]) - lo
    l = np.int64(sc[_L]) - lo
    phase = np.int64(sc[_PHASE])
    ne = np.int64(sc[_NE])
    nx = np.int64(sc[_NX])
    acc = sc[_ACC]
    r2, l2 = _second_edges(st, r, l, n)
    h = _drift(r, l, r2, l2, half_lam, e11, e22)
    status = RUNNING
    while True:
        if ne >= edge_log.shape[0] - 1 or nx >= exc_log.shape[0] - 1:
            status = FULL
            break
        t_next = t + rng.exponential(1.0 / total)
        if t_next > t_end:
            acc += h * (t_end - t)
            t = t_end
            status = DONE
            break
        acc += h * (t_next - t)
        t = t_next
        x = rng.integers(0, n)
        u = rng.random() * total_site
        c = 0
        while c < rates.shape[0] - 2 and u >= rates[c]:
            c += 1
        y = -1
        newt = 0
        sx = st[x]
        if c == 0:
            if sx != 0:
                y = x
        elif sx != 0:
            if c == 1 or c == 3 or c == 5 or c == 8:
                y = x + 1
                z = x - 1
            else:
                y = x - 1
                z = x + 1
            if 0 <= y < n and st[y] == 0:
                newt = sx
                zin = 0 <= z < n
                if c == 1 or c == 2:
                    pass
                elif c == 3 or c == 4:
                    if not (sx == 1 and zin and st[z] == 1):
                        y = -1
                elif c == 5 or c == 6:
                    if not (sx == 2 and zin and st[z] == 2):
                        y = -1
                elif c == 7:
                    if not (sx == 1 and zin and st[z] == 2):
                        y = -1
                else:
                    if not (sx == 2 and zin and st[z] == 1):
                        y = -1
            else:
                y = -1
        if y < 0:
            continue
        class_counts[c] += 1
        # pre-event bookkeeping for a separating death
        if c == 0 and phase == CONTACT and (y == r or y == l):
            r2, l2 = _second_edges(st, r, l, n)
            exc_log[nx, 0] = t
            exc_log[nx, 3] = r + lo
            exc_log[nx, 4] = l + lo
            exc_log[nx, 5] = r2 + lo if r2 >= 0 else np.nan
            exc_log[nx, 6] = l2 + lo if l2 >= 0 else np.nan
        st[y] = newt
        # second edges; R and L themselves are handled below
        if newt == 1 and r2 < y < r:
            r2 = y
        elif newt == 2 and l < y < l2:
            l2 = y
        elif newt == 0 and y == r2:
            r2 = -1
            for j in range(y - 1, -1, -1):
                if st[j] == 1:
                    r2 = j
                    break
        elif newt == 0 and y == l2:
            l2 = n
            for j in range(y + 1, n):
                if st[j] == 2:
                    l2 = j
                    break
        if audit:
            if newt == 1 and y > l:
                sc[_AUD] += 1
            if newt == 2 and y < r:
                sc[_AUD] += 1
            if not _ordered(st, n):
                sc[_AUD] += 1
        moved = False
        if newt == 1 and y > r:
            r2 = r
            r = y
            moved = True
        elif newt == 2 and y < l:
            l2 = l
            l = y
            moved = True
        elif newt == 0 and y == r:
            r = r2
            r2 = -1
            for j in range(r - 1, -1, -1):
                if st[j] == 1:
                    r2 = j
                    break
            moved = True
        elif newt == 0 and y == l:
            l = l2
            l2 = n
            for j in range(l + 1, n):
                if st[j] == 2:
                    l2 = j
                    break
            moved = True
        h = _drift(r, l, r2, l2, half_lam, e11, e22)
        if not moved:
            continue
        if r < 0 or l >= n:
            status = EXTINCT
            break
        edge_log[ne, 0] = t
        edge_log[ne, 1] = r + lo
        edge_log[ne, 2] = l + lo
        ne += 1
        if phase == CONTACT and l - r > 1:
            phase = SEPARATED
        elif phase == SEPARATED and l - r == 1:
            phase = CONTACT
            m1, m2 = _probe_masks(st, r, l, n)
            exc_log[nx, 1] = t
            exc_log[nx, 2] = lo + r + 0.5
            exc_log[nx, 7] = m1
            exc_log[nx, 8] = m2
            exc_log[nx, 9] = acc
            nx += 1
        if r < buffer or l > n - 1 - buffer:
            status = VIOLATION
            break
        # re-center on the midpoint
        center = (n - 1) // 2
        shift = (r + l) // 2 - center
        if shift > recenter or shift < -recenter:
            if shift > 0:
                for j in range(n - shift):
                    st[j] = st[j + shift]
                for j in range(n - shift, n):
                    st[j] = 2
            else:
                s = -shift
                for j in range(n - 1, s - 1, -1):
                    st[j] = st[j - s]
                for j in range(s):
                    st[j] = 1
            lo += shift
            r -= shift
            l -= shift
            r2 -= shift
            l2 -= shift
    sc[_T] = t
    sc[_LO] = lo
    sc[_R] = r + lo
    sc[_L] = l + lo
    sc[_PHASE] = phase
    sc[_NE] = ne
    sc[_NX] = nx
    sc[_ACC] = acc
    return status


@dataclass
class InterfaceTrace:
    """Edges and stopping times of one Heaviside run.

    ``sigma[i]``/``tau[i]`` are the (i+1)-th separation and contact times;
    ``tau`` may be one shorter when the run ends during a separation.
    """
    edge_times: np.ndarray
    R: np.ndarray
    L: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    X_tau: np.ndarray
    R_sigma: np.ndarray       # edges just before each separation
    L_sigma: np.ndarray
    R2_sigma: np.ndarray
    L2_sigma: np.ndarray
    mask1_tau: np.ndarray     # bit k-1: site R - k holds a 1, at each contact time
    mask2_tau: np.ndarray     # bit k-1: site L + k holds a 2
    drift_integral_tau: np.ndarray   # integral of the drift of X from 0 to tau_i
    T: float
    t_final: float
    terminal: str = None      # None, "extinct" or "window"
    audit_violations: int = 0
    class_counts: np.ndarray = field(default=None, repr=False)

    @property
    def X(self):
        return (self.R + self.L) / 2.0

    @property
    def contact_phase(self):
        return (self.L - self.R) == 1

    @property
    def increments(self):
        """X at tau_{i+1} minus X at tau_i for i >= 1."""
        return np.diff(self.X_tau[1:])

    @property
    def compensated_increments(self):
        """Integral of the drift of X over each excursion, i >= 1.

        Each has the same mean as the matching X increment (Dynkin's
        formula) without the jump noise.
        """
        return np.diff(self.drift_integral_tau[1:])

    @property
    def tau_increments(self):
        return np.diff(self.tau[1:])

    @property
    def contact_durations(self):
        """sigma_{i+1} - tau_i for i >= 1."""
        m = min(self.tau.shape[0], self.sigma.shape[0])
        return self.sigma[1:m] - self.tau[1:m]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "R", "L", "X", "phase"])
            for t, r, l in zip(self.edge_times, self.R, self.L):
                w.writerow([repr(float(t)), int(r), int(l), (r + l) / 2.0,
                            "contact" if l - r == 1 else "separated"])


_STATUS_NAME = {EXTINCT: "extinct", VIOLATION: "window"}


def _rates(spec, A):
    lam = spec.lam
    for v in A.entries():
        if v < 0:
            raise DomainError("the simplified representation needs nonnegative payoffs")
    e11 = double_arrow_rate(lam, A.a11)
    e22 = double_arrow_rate(lam, A.a22)
    e12 = double_arrow_rate(lam, A.a12)
    e21 = double_arrow_rate(lam, A.a21)
    per = np.array([1.0, lam / 2, lam / 2, e11, e11, e22, e22, e12, e21])
    return np.concatenate([np.cumsum(per), [per.sum()]])


def run_heaviside(spec, A, T, seed, window_policy=WindowPolicy(), audit=False,
                  raise_on_violation=True):
    """Run from 1s on (-inf, 0] and 2s on [1, inf) up to time ``T``."""
    if spec.g != "exp":
        raise DomainError("the simplified representation assumes g = exp")
    rates = _rates(spec, A)
    W = window_policy.W
    n = 2 * W + 1
    st = np.where(np.arange(n) <= W, 1, 2).astype(np.uint8)
    lo = -W
    sc = np.array([0.0, lo, 0, 1, CONTACT, 0, 0, 0, 0.0], dtype=np.float64)
    rng = rng_for(seed, SIMPLIFIED_1D)
    cap_e = max(1024, int(20 * T))
    cap_x = max(256, int(4 * T))
    edge_log = np.zeros((cap_e, 3))
    exc_log = np.full((cap_x, N_EXC_COLS), np.nan)
    counts = np.zeros(9, dtype=np.int64)
    edge_log[0] = (0.0, 0, 1)
    sc[_NE] = 1
    while True:
        status = _kernel(st, sc, rng, float(T), rates, W, window_policy.buffer,
                         window_policy.recenter, edge_log, exc_log, audit, counts,
                         spec.lam / 2, double_arrow_rate(spec.lam, A.a11),
                         double_arrow_rate(spec.lam, A.a22))
        if status != FULL:
            break
        if sc[_NE] >= edge_log.shape[0] - 1:
            edge_log = np.concatenate([edge_log, np.zeros_like(edge_log)])
        if sc[_NX] >= exc_log.shape[0] - 1:
            exc_log = np.concatenate([exc_log, np.full_like(exc_log, np.nan)])
    ne, nx = int(sc[_NE]), int(sc[_NX])
    # a separation still open at the end has sigma filled but no tau
    n_sigma = nx + (1 if not np.isnan(exc_log[nx, 0]) else 0)
    ex = exc_log[:max(nx, n_sigma)]
    # tau_0 = 0 with X = 1/2 precedes the first excursion
    tau = np.concatenate([[0.0], ex[:nx, 1]])
    X_tau = np.concatenate([[0.5], ex[:nx, 2]])
    drift_tau = np.concatenate([[0.0], ex[:nx, 9]])
    mask1 = np.concatenate([[2 ** N_PROBE - 1], ex[:nx, 7]]).astype(np.int64)
    mask2 = np.concatenate([[2 ** N_PROBE - 1], ex[:nx, 8]]).astype(np.int64)
    trace = InterfaceTrace(
        edge_times=edge_log[:ne, 0].copy(), R=edge_log[:ne, 1].astype(np.int64),
        L=edge_log[:ne, 2].astype(np.int64),
        sigma=ex[:n_sigma, 0].copy(), tau=tau, X_tau=X_tau,
        R_sigma=ex[:n_sigma, 3].copy(), L_sigma=ex[:n_sigma, 4].copy(),
        R2_sigma=ex[:n_sigma, 5].copy(), L2_sigma=ex[:n_sigma, 6].copy(),
        mask1_tau=mask1, mask2_tau=mask2, drift_integral_tau=drift_tau, T=float(T), t_final=float(sc[_T]),
        terminal=_STATUS_NAME.get(status), audit_violations=int(sc[_AUD]),
        class_counts=counts)
    if status == VIOLATION and raise_on_violation:
        raise WindowViolation(f"an interface edge reached the window buffer at t={sc[_T]:.3f}",
                              trace)
    return trace


def _ratio_ci(sums, counts, z=1.959963984540054):
    """Pooled mean with a per-trace cluster-robust normal interval."""
    n = counts.sum()
    mean = sums.sum() / n
    k = counts.shape[0]
    if k < 2:
        raise EstimationError("need at least two traces with excursions")
    resid = sums - mean * counts
    se = math.sqrt(k / (k - 1) * np.sum(resid ** 2)) / n
    return mean, (mean - z * se, mean + z * se), se


@dataclass(frozen=True)
class DriftEstimate:
    drift: float              # mean X increment per excursion
    drift_ci: tuple
    drift_se: float
    compensated: float        # mean drift integral per excursion, same target
    compensated_ci: tuple
    compensated_se: float
    tau_mean: float
    tau_ci: tuple
    tau_se: float
    n_excursions: int
    n_traces: int
    n_truncated: int          # traces cut short by a window violation or extinction


def estimate_drift(traces):
    """Pooled per-excursion drift over excursions i >= 1.

    Intervals are normal approximations with per-trace clustering, since
    excursions within one trace are dependent.
    """
    sx, sc, st, cnt = [], [], [], []
    truncated = 0
    for tr in traces:
        if tr.terminal is not None:
            truncated += 1
        dx = tr.increments
        if dx.shape[0] == 0:
            continue
        sx.append(dx.sum())
        sc.append(tr.compensated_increments.sum())
        st.append(tr.tau_increments.sum())
        cnt.append(dx.shape[0])
    if not cnt:
        raise EstimationError("no completed excursions")
    cnt = np.array(cnt, dtype=float)
    m, ci, se = _ratio_ci(np.array(sx), cnt)
    mc, cic, sec = _ratio_ci(np.array(sc), cnt)
    mt, cit, set_ = _ratio_ci(np.array(st), cnt)
    return DriftEstimate(m, ci, se, mc, cic, sec, mt, cit, set_, int(cnt.sum()), len(cnt),
                         truncated)


def contact_durations(traces):
    return np.concatenate([tr.contact_durations for tr in traces] or [np.zeros(0)])


def contact_time_test(traces):
    """Mean, SE and KS p-value of pooled contact durations against Exp(2)."""
    d = contact_durations(traces)
    if d.shape[0] < 2:
        raise EstimationError("not enough contact periods")
    ks = stats.kstest(d, "expon", args=(0.0, 0.5))
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.shape[0])), float(ks.pvalue), d


@dataclass(frozen=True)
class ProbeRow:
    A: tuple
    p_left: float      # P(every R - x, x in A, holds a 1)
    p_right: float     # P(every L + x, x in A, holds a 2)
    gap: float
    se: float


def mirror_domination_probe(traces, site_sets, include_start=False):
    """Paired estimates at contact times tau_i (i >= 1 unless ``include_start``)."""
    first = 0 if include_start else 1
    m1 = np.concatenate([tr.mask1_tau[first:] for tr in traces])
    m2 = np.concatenate([tr.mask2_tau[first:] for tr in traces])
    rows = []
    for A in site_sets:
        A = tuple(sorted(A))
        if any(not 1 <= a <= N_PROBE for a in A):
            raise DomainError(f"probe sites must lie in 1..{N_PROBE}")
        bits = sum(1 << (a - 1) for a in A)
        left = ((m1 & bits) == bits).astype(float)
        right = ((m2 & bits) == bits).astype(float)
        diff = left - right
        n = diff.shape[0]
        se = float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        rows.append(ProbeRow(A, float(left.mean()), float(right.mean()),
                             float(diff.mean()), se))
    return rows
