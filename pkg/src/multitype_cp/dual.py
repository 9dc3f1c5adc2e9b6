"""Single and double arrows, good 1-arrows, the eta process and its dual.

Event kinds in a :class:`ZetaEventStream`:

* ``DEATH`` at ``x``;
* ``SINGLE`` arrow ``x -> y``: a player of either type at ``x`` fills an
  empty ``y``;
* ``DOUBLE`` arrow ``z -> x -> y``: a type-1 player at ``x`` fills an empty
  ``y`` provided ``z`` also holds a type 1.

An event *points at* its head: ``x`` for a death, ``y`` for an arrow.  For
a double arrow only the second piece counts, which is what makes double
arrows point at a given site at total rate ``(2d)^2 * eps``.

A double arrow at time ``s`` with ``y != z`` is *good* when, among the
events pointing at ``x``, ``y`` or ``z`` with times in ``[s - 2, s]``
(the arrow itself excluded), there is exactly a death at ``z`` inside
``(s - 2, s - 1)`` and a single arrow ``x -> z`` inside ``(s - 1, s)``, and
nothing else.  Events that land exactly on a window boundary disqualify
the arrow.  The eta process uses single arrows for both types and the
second piece of good double arrows (1-arrows) for type 1 only.
"""

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .coupling import CouplingReport
from .direct import TrajectoryStats
from .errors import DomainError, ResourceError
from .graphical import _apply, _sample_grid, build_events, check_ceiling
from .lattice import Configuration, TorusGeometry
from .payoff import PayoffMatrix, fitness_table
from .seeding import WINDOWS, ZETA_SLAB, rng_for

DEATH, SINGLE, DOUBLE = 0, 1, 2
DEFAULT_CONE_BUDGET = 10 ** 6

# bits of the window classification
F_DEATH_Z = 1        # exactly one death at z strictly inside (s-2, s-1)
F_ARROW_Z = 2        # exactly one single arrow into z strictly inside (s-1, s)
F_NO_DEATHS = 4      # no other deaths at x, y, z in [s-2, s]
F_NO_SINGLES = 8     # no other single arrows into x, y, z in [s-2, s]
F_NO_DOUBLES = 16    # no other double arrows into x, y, z in [s-2, s]
F_FROM_X = 32        # the single arrow into z comes from x
ALL_FACTORS = 31
GOOD = 63


def epsilon_rate(spec, a11, d):
    """Rate of each double arrow z -> x -> y."""
    if a11 < 0:
        raise DomainError("double arrows need a11 >= 0")
    k = 2 * d
    return (spec(a11 / k) - spec.lam) / k ** 2


def good_arrow_factors(spec, a11, d):
    """The five independent Poisson factors of the good-arrow event."""
    lam = spec.lam
    eps = epsilon_rate(spec, a11, d)
    k = 2 * d
    return {
        "death_at_z": math.exp(-1.0),               # P(N_1 = 1)
        "arrow_into_z": lam * math.exp(-lam),       # P(N_lam = 1)
        "no_deaths": math.exp(-5.0),                 # P(N_5 = 0)
        "no_singles": math.exp(-5.0 * lam),          # P(N_{5 lam} = 0)
        "no_doubles": math.exp(-6.0 * k * k * eps),  # P(N_{6 (2d)^2 eps} = 0)
    }


def good_arrow_probability(spec, a11, d):
    """Closed form lam * exp(-6 (1 + lam + (2d)^2 eps)).

    This is the probability that the five factors all occur, which counts a
    single arrow into z from any neighbor.  See
    :func:`good_arrow_probability_exact` for the tail-at-x requirement.
    """
    lam = spec.lam
    eps = epsilon_rate(spec, a11, d)
    return lam * math.exp(-6.0 * (1.0 + lam + (2 * d) ** 2 * eps))


def good_arrow_probability_exact(spec, a11, d):
    """Probability that a double arrow is good, witness arrow tail at x."""
    return good_arrow_probability(spec, a11, d) / (2 * d)


@dataclass(frozen=True, eq=False)
class ZetaEventStream:
    geometry: TorusGeometry
    T: float
    lam: float
    eps: float
    seed: int
    times: np.ndarray
    kind: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    source: str = ""

    def __len__(self):
        return int(self.times.shape[0])

    @cached_property
    def heads(self):
        return np.where(self.kind == DEATH, self.x, self.y).astype(np.int32)

    @cached_property
    def fingerprint(self):
        h = hashlib.sha256()
        for a in (self.times, self.kind, self.x, self.y, self.z):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.geometry.sides, self.T, self.lam, self.eps, self.seed,
                       self.source)).encode())
        return h.hexdigest()

    def count(self, kind):
        return int(np.count_nonzero(self.kind == kind))


def _freeze(geometry, T, lam, eps, seed, cols, source=""):
    times, kind, x, y, z = cols
    order = np.argsort(times, kind="stable")
    arrays = [np.ascontiguousarray(a[order]) for a in (times, kind, x, y, z)]
    arrays[0] = arrays[0].astype(np.float64)
    arrays[1] = arrays[1].astype(np.int8)
    for i in (2, 3, 4):
        arrays[i] = arrays[i].astype(np.int32)
    for a in arrays:
        a.setflags(write=False)
    return ZetaEventStream(geometry, float(T), float(lam), float(eps), int(seed), *arrays,
                           source=source)


def build_zeta_events(geometry, spec, a11, T, seed):
    """Independent single/double-arrow stream in unit-length slabs."""
    if T < 0:
        raise DomainError("window length must be nonnegative")
    lam = spec.lam
    eps = epsilon_rate(spec, a11, geometry.d)
    K = geometry.degree
    n_sites = geometry.total_sites
    nbr = geometry.neighbor_table
    per_site = 1.0 + lam + K * K * eps
    parts = []
    for k in range(int(math.ceil(T))):
        t0, t1 = float(k), min(float(k + 1), float(T))
        if t1 <= t0:
            continue
        rng = rng_for(seed, ZETA_SLAB, k)
        n = int(rng.poisson(n_sites * per_site * (t1 - t0)))
        times = t0 + (t1 - t0) * rng.random(n)
        u = rng.random(n) * per_site
        kind = np.where(u < 1.0, DEATH, np.where(u < 1.0 + lam, SINGLE, DOUBLE))
        x = rng.integers(0, n_sites, n)
        ydir = rng.integers(0, K, n)
        zdir = rng.integers(0, K, n)
        y = np.where(kind == DEATH, -1, nbr[x, ydir])
        z = np.where(kind == DOUBLE, nbr[x, zdir], -1)
        parts.append((times, kind, x, y, z))
    if parts:
        cols = [np.concatenate(c) for c in zip(*parts)]
    else:
        cols = [np.zeros(0), np.zeros(0, np.int8)] + [np.zeros(0, np.int32)] * 3
    return _freeze(geometry, T, lam, eps, seed, cols)


def make_zeta_stream(geometry, events, T=None, lam=1.0, eps=0.0):
    """Hand-built stream from (time, kind, x, y, z) tuples (y, z = -1 if unused)."""
    cols = [np.array([e[i] for e in events]) for i in range(5)] if events else \
        [np.zeros(0), np.zeros(0, np.int8)] + [np.zeros(0, np.int32)] * 3
    if T is None:
        T = float(max(e[0] for e in events)) + 1.0 if events else 0.0
    return _freeze(geometry, T, lam, eps, -1, cols, source="manual")


def zeta_view(stream, spec, a11):
    """Read single and double arrows off a uniform-mark stream with V marks.

    ``U <= lam`` gives a single arrow, ``lam < U <= lam exp(a11/2d)`` a
    double arrow whose first piece starts at the ``V`` neighbor of the tail;
    other arrows are dropped.
    """
    if not stream.with_V:
        raise DomainError("the stream carries no V marks")
    geo = stream.geometry
    lam = spec.lam
    top = spec(a11 / geo.degree)
    nbr = geo.neighbor_table
    death = stream.is_death
    single = ~death & (stream.U <= lam)
    double = ~death & (stream.U > lam) & (stream.U <= top)
    keep = death | single | double
    kind = np.where(death, DEATH, np.where(single, SINGLE, DOUBLE))[keep]
    x = stream.sites[keep]
    kk = np.minimum(stream.kinds, geo.degree - 1).astype(np.int64)[keep]
    vv = np.maximum(stream.V, 0).astype(np.int64)[keep]
    y = np.where(kind == DEATH, -1, nbr[x, kk])
    z = np.where(kind == DOUBLE, nbr[x, vv], -1)
    cols = (stream.times[keep], kind, x, y, z)
    return _freeze(geo, stream.T, lam, epsilon_rate(spec, a11, geo.d), stream.seed, cols,
                   source=stream.fingerprint)


# ---------------------------------------------------------------- good arrows

@njit(cache=True)
def _classify(buf_t, buf_kind, buf_head, buf_from_x, n, s, x, y, z):
    """Bitmask of window conditions for a double arrow at time ``s``.

    The buffer holds the ``n`` events pointing at x, y or z with times in
    [s - 2, s], the double arrow itself excluded.
    """
    z_deaths_inside = 0
    other_deaths = 0
    z_arrows_inside = 0
    other_singles = 0
    doubles = 0
    from_x = False
    for i in range(n):
        t = buf_t[i]
        k = buf_kind[i]
        h = buf_head[i]
        if k == 0:
            if h == z and s - 2.0 < t < s - 1.0:
                z_deaths_inside += 1
            else:
                other_deaths += 1
        elif k == 1:
            if h == z and s - 1.0 < t < s:
                z_arrows_inside += 1
                from_x = buf_from_x[i]
            else:
                other_singles += 1
        else:
            doubles += 1
    mask = 0
    if z_deaths_inside == 1:
        mask |= 1
    if z_arrows_inside == 1:
        mask |= 2
        if from_x:
            mask |= 32
    if other_deaths == 0:
        mask |= 4
    if other_singles == 0:
        mask |= 8
    if doubles == 0:
        mask |= 16
    return mask


@njit(cache=True)
def _label_kernel(times, kind, xs, ys, zs, heads, order, start, out_mask, out_wd, out_wa):
    cap = 64
    buf_t = np.empty(cap)
    buf_kind = np.empty(cap, np.int8)
    buf_head = np.empty(cap, np.int32)
    buf_from_x = np.empty(cap, np.bool_)
    m = 0
    for e in range(times.shape[0]):
        if kind[e] != 2:
            continue
        s = times[e]
        x, y, z = xs[e], ys[e], zs[e]
        out_mask[m] = 0
        out_wd[m] = np.nan
        out_wa[m] = np.nan
        if s > 2.0 and y != z:
            n = 0
            for w in (x, y, z):
                lo, hi = start[w], start[w + 1]
                # first incident event with time >= s - 2
                a, b = lo, hi
                while a < b:
                    mid = (a + b) // 2
                    if times[order[mid]] < s - 2.0:
                        a = mid + 1
                    else:
                        b = mid
                j = a
                while j < hi and times[order[j]] <= s:
                    f = order[j]
                    if f != e:
                        if n == cap:
                            cap *= 2
                            buf_t = np.concatenate((buf_t, np.empty(cap // 2)))
                            buf_kind = np.concatenate((buf_kind, np.empty(cap // 2, np.int8)))
                            buf_head = np.concatenate((buf_head, np.empty(cap // 2, np.int32)))
                            buf_from_x = np.concatenate(
                                (buf_from_x, np.empty(cap // 2, np.bool_)))
                        buf_t[n] = times[f]
                        buf_kind[n] = kind[f]
                        buf_head[n] = heads[f]
                        buf_from_x[n] = kind[f] == 1 and xs[f] == x
                        n += 1
                        if kind[f] == 0 and heads[f] == z and s - 2.0 < times[f] < s - 1.0:
                            out_wd[m] = times[f]
                        if kind[f] == 1 and heads[f] == z and s - 1.0 < times[f] < s:
                            out_wa[m] = times[f]
                    j += 1
            out_mask[m] = _classify(buf_t, buf_kind, buf_head, buf_from_x, n, s, x, y, z)
        m += 1


@dataclass(frozen=True)
class GoodArrowLabel:
    event: int             # index of the double arrow in the stream
    time: float
    x: int
    y: int
    z: int
    good: bool
    witness_death: float   # NaN when absent
    witness_arrow: float


@dataclass(frozen=True, eq=False)
class LabelSet:
    """Good-arrow verdicts for every double arrow of one stream."""
    fingerprint: str
    events: np.ndarray     # indices of double arrows
    masks: np.ndarray
    witness_death: np.ndarray
    witness_arrow: np.ndarray
    good_event: np.ndarray = field(repr=False)   # per stream event, True at good doubles
    times: np.ndarray = field(repr=False, default=None)
    xyz: np.ndarray = field(repr=False, default=None)

    @property
    def good(self):
        return self.masks == GOOD

    @property
    def n_good(self):
        return int(np.count_nonzero(self.good))

    def __len__(self):
        return int(self.events.shape[0])

    def __getitem__(self, i):
        e = int(self.events[i])
        x, y, z = (int(v) for v in self.xyz[i])
        return GoodArrowLabel(e, float(self.times[i]), x, y, z, bool(self.masks[i] == GOOD),
                              float(self.witness_death[i]), float(self.witness_arrow[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def synthetic(cls, stream, good_event):
        """Arbitrary 1-arrow assignment on ``stream``, for stress tests of the dual."""
        good_event = np.asarray(good_event, dtype=np.bool_) & (stream.kind == DOUBLE)
        ev = np.flatnonzero(stream.kind == DOUBLE)
        masks = np.where(good_event[ev], GOOD, 0)
        nan = np.full(ev.shape[0], np.nan)
        xyz = np.stack([stream.x[ev], stream.y[ev], stream.z[ev]], axis=1)
        return cls(stream.fingerprint, ev, masks, nan, nan.copy(), good_event,
                   stream.times[ev], xyz)


def _incident_index(stream):
    n_sites = stream.geometry.total_sites
    heads = stream.heads
    order = np.argsort(heads, kind="stable").astype(np.int64)
    start = np.zeros(n_sites + 1, dtype=np.int64)
    np.cumsum(np.bincount(heads, minlength=n_sites), out=start[1:])
    return order, start


def label_good_arrows(stream):
    order, start = _incident_index(stream)
    ev = np.flatnonzero(stream.kind == DOUBLE)
    m = ev.shape[0]
    masks = np.zeros(m, dtype=np.int64)
    wd = np.full(m, np.nan)
    wa = np.full(m, np.nan)
    _label_kernel(stream.times, stream.kind, stream.x, stream.y, stream.z, stream.heads,
                  order, start, masks, wd, wa)
    good_event = np.zeros(len(stream), dtype=np.bool_)
    good_event[ev[masks == GOOD]] = True
    xyz = np.stack([stream.x[ev], stream.y[ev], stream.z[ev]], axis=1)
    return LabelSet(stream.fingerprint, ev, masks, wd, wa, good_event, stream.times[ev], xyz)


@njit(cache=True)
def _poisson_fill(rng, mean, t0, t1, kind, head, p_from_x, buf_t, buf_kind, buf_head,
                  buf_from_x, n):
    # the witness flag marks single arrows into z whose tail is x
    k = rng.poisson(mean)
    if n + k > buf_t.shape[0]:
        raise RuntimeError("window buffer overflow")
    for _ in range(k):
        buf_t[n] = t0 + (t1 - t0) * rng.random()
        buf_kind[n] = kind
        buf_head[n] = head
        buf_from_x[n] = p_from_x > 0.0 and rng.random() < p_from_x
        n += 1
    return n


@njit(cache=True)
def _window_kernel(rng, n_windows, lam, dbl_rate, degree, counts):
    """Sample independent [s-2, s] windows around x=0, y=1, z=2 and tally masks.

    ``counts[mask]`` accumulates the number of windows with each bitmask.
    """
    cap = 256
    buf_t = np.empty(cap)
    buf_kind = np.empty(cap, np.int8)
    buf_head = np.empty(cap, np.int32)
    buf_from_x = np.empty(cap, np.bool_)
    s = 3.0
    for _ in range(n_windows):
        n = 0
        for w in range(3):
            p = 1.0 / degree if w == 2 else 0.0
            n = _poisson_fill(rng, 2.0, s - 2.0, s, 0, w, 0.0,
                              buf_t, buf_kind, buf_head, buf_from_x, n)
            n = _poisson_fill(rng, 2.0 * lam, s - 2.0, s, 1, w, p,
                              buf_t, buf_kind, buf_head, buf_from_x, n)
            n = _poisson_fill(rng, 2.0 * dbl_rate, s - 2.0, s, 2, w, 0.0,
                              buf_t, buf_kind, buf_head, buf_from_x, n)
        counts[_classify(buf_t, buf_kind, buf_head, buf_from_x, n, s, 0, 1, 2)] += 1


@dataclass(frozen=True)
class WindowEstimate:
    n_windows: int
    mask_counts: np.ndarray

    def frequency(self, required):
        idx = np.arange(self.mask_counts.shape[0])
        hit = (idx & required) == required
        k = int(self.mask_counts[hit].sum())
        p = k / self.n_windows
        return p, math.sqrt(max(p * (1 - p), 0.0) / self.n_windows), k

    @property
    def good(self):
        return self.frequency(GOOD)

    @property
    def joint(self):
        return self.frequency(ALL_FACTORS)

    def factor(self, name):
        bit = {"death_at_z": F_DEATH_Z, "arrow_into_z": F_ARROW_Z, "no_deaths": F_NO_DEATHS,
               "no_singles": F_NO_SINGLES, "no_doubles": F_NO_DOUBLES}[name]
        return self.frequency(bit)


def sample_windows(spec, a11, d, n_windows, seed, chunk=10 ** 6):
    """Monte Carlo over independent three-site windows of a double arrow.

    Each window draws the Poisson events pointing at x, y and z during
    [s - 2, s] afresh and classifies them with the labeling predicate.
    """
    eps = epsilon_rate(spec, a11, d)
    k = 2 * d
    counts = np.zeros(64, dtype=np.int64)
    done = 0
    c = 0
    while done < n_windows:
        m = min(chunk, n_windows - done)
        _window_kernel(rng_for(seed, WINDOWS, c), m, spec.lam, k * k * eps, k, counts)
        done += m
        c += 1
    return WindowEstimate(int(n_windows), counts)


# ---------------------------------------------------------------- zeta and eta

ZETA, ETA = 0, 1


@njit(cache=True)
def _zeta_apply(e, st, kind, xs, ys, zs, good, mode):
    k = kind[e]
    x = xs[e]
    if k == 0:
        if st[x] != 0:
            st[x] = 0
            return x
        return -1
    y = ys[e]
    if st[y] != 0 or st[x] == 0:
        return -1
    if k == 1:
        st[y] = st[x]
        return y
    if st[x] != 1:
        return -1
    if mode == 0:
        if st[zs[e]] == 1:
            st[y] = 1
            return y
    elif good[e]:
        st[y] = 1
        return y
    return -1


@njit(cache=True)
def _count(st):
    n1 = 0
    n2 = 0
    for v in st:
        if v == 1:
            n1 += 1
        elif v == 2:
            n2 += 1
    return n1, n2


@njit(cache=True)
def _run_zeta_kernel(st, times, kind, xs, ys, zs, good, mode, t_end, grid, counts):
    n1, n2 = _count(st)
    si = 0
    changes = 0
    for e in range(times.shape[0]):
        t = times[e]
        if t > t_end:
            break
        while si < grid.shape[0] and grid[si] < t:
            counts[si, 0] = n1
            counts[si, 1] = n2
            si += 1
        old = st[xs[e]]
        y = _zeta_apply(e, st, kind, xs, ys, zs, good, mode)
        if y >= 0:
            changes += 1
            if st[y] == 0:
                if old == 1:
                    n1 -= 1
                else:
                    n2 -= 1
            elif st[y] == 1:
                n1 += 1
            else:
                n2 += 1
    while si < grid.shape[0]:
        counts[si, 0] = n1
        counts[si, 1] = n2
        si += 1
    return changes


def _check_labels(stream, labels):
    if labels.fingerprint != stream.fingerprint:
        raise DomainError("labels were computed from a different stream")


def _run(config0, stream, good, mode, horizon, sample_times):
    if config0.geometry != stream.geometry:
        raise DomainError("configuration and stream live on different lattices")
    horizon = stream.T if horizon is None else float(horizon)
    grid, _, _ = _sample_grid(horizon, sample_times, ())
    st = config0.states.copy()
    counts = np.zeros((grid.shape[0], 2), dtype=np.int64)
    changes = _run_zeta_kernel(st, stream.times, stream.kind, stream.x, stream.y, stream.z,
                               good, mode, horizon, grid, counts)
    geo = stream.geometry
    return TrajectoryStats(grid, counts[:, 0].copy(), counts[:, 1].copy(), geo.total_sites,
                           Configuration(geo, st), horizon, int(changes),
                           bool(counts[-1].sum() == 0))


def run_zeta(config0, stream, horizon=None, sample_times=None):
    good = np.zeros(len(stream), dtype=np.bool_)
    return _run(config0, stream, good, ZETA, horizon, sample_times)


def run_eta(config0, stream, labels, horizon=None, sample_times=None):
    _check_labels(stream, labels)
    return _run(config0, stream, labels.good_event, ETA, horizon, sample_times)


def _lower_upper_ok(lo, hi):
    """lo^1 within hi^1 and lo^2 containing hi^2."""
    return bool(np.all(hi[lo == 1] == 1) and np.all(lo[hi == 2] == 2))


@njit(cache=True)
def _chain_violation(y, lo, hi):
    # lo has fewer 1s and more 2s than hi
    if y < 0:
        return 0
    if lo[y] == 1 and hi[y] != 1:
        return 1
    if hi[y] == 2 and lo[y] != 2:
        return 2
    return 0


@njit(cache=True)
def _xi_zeta_kernel(xi, ze, nbr, table, times, sites, kinds, U, V, lam, band_top, t_end):
    K = nbr.shape[1]
    checked = 0
    for e in range(times.shape[0]):
        if times[e] > t_end:
            break
        checked += 1
        yx = _apply(e, xi, nbr, table, times, sites, kinds, U)
        x = sites[e]
        yz = -1
        if kinds[e] == K:
            if ze[x] != 0:
                ze[x] = 0
                yz = x
        else:
            y = nbr[x, kinds[e]]
            if ze[x] != 0 and ze[y] == 0:
                if U[e] <= lam:
                    ze[y] = ze[x]
                    yz = y
                elif U[e] <= band_top and ze[x] == 1 and ze[nbr[x, V[e]]] == 1:
                    ze[y] = 1
                    yz = y
        v = _chain_violation(yx, ze, xi)
        site = yx
        if v == 0:
            v = _chain_violation(yz, ze, xi)
            site = yz
        if v != 0:
            return checked, e, site, v
    return checked, -1, -1, 0


def _report(stream_times, checked, e, site, v, lower_name, upper_name):
    if v == 0:
        return CouplingReport(True, int(checked), None)
    which = (f"type-1 set of {lower_name} contained in {upper_name}" if v == 1
             else f"type-2 set of {lower_name} contains {upper_name}")
    return CouplingReport(False, int(checked), (float(stream_times[e]), int(site), which))


def coupled_xi_zeta(config0, a11, spec, T, seed, zeta0=None, stream=None):
    """Run xi (matrix (a11, 0, 0, 0)) and zeta on one uniform-mark stream.

    Returns ``(xi_final, zeta_final, report, stream)``.  The stream uses
    ``M = lam exp(a11)`` and carries V marks.
    """
    if not a11 > 0:
        raise DomainError("the coupling needs a11 > 0")
    zeta0 = config0 if zeta0 is None else zeta0
    if not _lower_upper_ok(zeta0.states, config0.states):
        raise DomainError("initial configurations violate the required inclusions")
    geo = config0.geometry
    matrix = PayoffMatrix(a11, 0.0, 0.0, 0.0)
    if stream is None:
        stream = build_events(geo, spec(a11), T, seed, with_V=True)
    if not stream.with_V:
        raise DomainError("the stream carries no V marks")
    table = fitness_table(matrix, spec, geo.degree)
    check_ceiling(stream, table)
    xi = config0.states.copy()
    ze = zeta0.states.copy()
    checked, e, site, v = _xi_zeta_kernel(xi, ze, geo.neighbor_table, table, stream.times,
                                          stream.sites, stream.kinds, stream.U, stream.V,
                                          spec.lam, spec(a11 / geo.degree), float(T))
    report = _report(stream.times, checked, e, site, v, "zeta", "xi")
    return Configuration(geo, xi), Configuration(geo, ze), report, stream


@njit(cache=True)
def _zeta_eta_kernel(ze, et, times, kind, xs, ys, zs, good, t_end):
    no_good = np.zeros(0, np.bool_)
    checked = 0
    for e in range(times.shape[0]):
        if times[e] > t_end:
            break
        y1 = _zeta_apply(e, ze, kind, xs, ys, zs, good, 0)
        y2 = _zeta_apply(e, et, kind, xs, ys, zs, good, 1)
        checked += 1
        v = _chain_violation(y1, et, ze)
        site = y1
        if v == 0:
            v = _chain_violation(y2, et, ze)
            site = y2
        if v != 0:
            return checked, e, site, v
    return checked, -1, -1, 0


def coupled_zeta_eta(zeta0, eta0, stream, labels, horizon=None):
    """Run zeta and eta on one stream; returns (zeta_final, eta_final, report)."""
    _check_labels(stream, labels)
    if not _lower_upper_ok(eta0.states, zeta0.states):
        raise DomainError("initial configurations violate the required inclusions")
    horizon = stream.T if horizon is None else float(horizon)
    ze = zeta0.states.copy()
    et = eta0.states.copy()
    checked, e, site, v = _zeta_eta_kernel(ze, et, stream.times, stream.kind, stream.x,
                                           stream.y, stream.z, labels.good_event, horizon)
    geo = stream.geometry
    report = _report(stream.times, checked, e, site, v, "eta", "zeta")
    return Configuration(geo, ze), Configuration(geo, et), report


# ---------------------------------------------------------------- duality

@njit(cache=True)
def _dual_kernel(root, t, times, kind, xs, ys, good, member, jt, js, jsign):
    """Backward sweep from (root, t); returns (n_jumps, used_one_arrow)."""
    hi = np.searchsorted(times, t, side="right")
    member[root] = True
    nj = 0
    used = False
    for e in range(hi - 1, -1, -1):
        k = kind[e]
        if k == 0:
            x = xs[e]
            if member[x]:
                member[x] = False
                jt[nj] = t - times[e]
                js[nj] = x
                jsign[nj] = -1
                nj += 1
        elif k == 1 or good[e]:
            if member[ys[e]]:
                if k == 2:
                    used = True
                u = xs[e]
                if not member[u]:
                    member[u] = True
                    jt[nj] = t - times[e]
                    js[nj] = u
                    jsign[nj] = 1
                    nj += 1
    return nj, used


@dataclass(frozen=True)
class DualSet:
    root: tuple                # (site, time)
    jump_s: np.ndarray         # backward times s = t - event time, nondecreasing
    jump_site: np.ndarray
    jump_sign: np.ndarray      # +1 site enters, -1 site leaves
    base: frozenset            # the set at s = t
    used_one_arrow: bool

    def at(self, s):
        """The dual set after going back ``s`` time units from the root."""
        members = {self.root[0]}
        for js, site, sign in zip(self.jump_s, self.jump_site, self.jump_sign):
            if js > s:
                break
            if sign > 0:
                members.add(int(site))
            else:
                members.discard(int(site))
        return frozenset(members)

    def meets(self, config0):
        return any(config0[y] != 0 for y in self.base)


def dual_set(root, stream, labels):
    _check_labels(stream, labels)
    x, t = int(root[0]), float(root[1])
    stream.geometry.check_site(x)
    n = len(stream)
    member = np.zeros(stream.geometry.total_sites, dtype=np.bool_)
    jt = np.zeros(n + 1)
    js = np.zeros(n + 1, dtype=np.int64)
    jsign = np.zeros(n + 1, dtype=np.int64)
    nj, used = _dual_kernel(x, t, stream.times, stream.kind, stream.x, stream.y,
                            labels.good_event, member, jt, js, jsign)
    return DualSet((x, t), jt[:nj].copy(), js[:nj].copy(), jsign[:nj].copy(),
                   frozenset(np.flatnonzero(member).tolist()), bool(used))


@njit(cache=True)
def _cone_kernel(root, t, times, kind, xs, ys, good, states0, t_entry, budget):
    """Backward closure then forward replay; returns (state, cone_events, overflow)."""
    hi = np.searchsorted(times, t, side="right")
    t_entry[:] = -np.inf
    t_entry[root] = t
    events = 0
    for e in range(hi - 1, -1, -1):
        k = kind[e]
        if k == 0:
            if t_entry[xs[e]] >= times[e]:
                events += 1
        elif k == 1 or good[e]:
            if t_entry[ys[e]] >= times[e]:
                events += 1
                u = xs[e]
                if t_entry[u] == -np.inf:
                    t_entry[u] = times[e]
        if events > budget:
            return -1, events, True
    st = states0.copy()
    for e in range(hi):
        k = kind[e]
        x = xs[e]
        if k == 0:
            if t_entry[x] >= times[e]:
                st[x] = 0
        elif k == 1 or good[e]:
            y = ys[e]
            if t_entry[y] >= times[e] and st[y] == 0 and st[x] != 0:
                if k == 1:
                    st[y] = st[x]
                elif st[x] == 1:
                    st[y] = 1
    return st[root], events, False


def influence_cone_replay(root, stream, labels, config0, budget=DEFAULT_CONE_BUDGET):
    """State of the eta process at ``root = (x, t)`` from its backward cone alone.

    The cone holds every site whose state at some earlier time can reach
    ``(x, t)`` through arrows usable by eta, each with its latest relevant
    time.  Only events inside the cone are replayed.
    """
    _check_labels(stream, labels)
    x, t = int(root[0]), float(root[1])
    stream.geometry.check_site(x)
    t_entry = np.empty(stream.geometry.total_sites)
    state, size, overflow = _cone_kernel(x, t, stream.times, stream.kind, stream.x, stream.y,
                                         labels.good_event, config0.states, t_entry, budget)
    if overflow:
        raise ResourceError(f"influence cone exceeds the budget of {budget} events "
                            f"(reached {size})")
    return int(state)


@njit(cache=True)
def _forward_queries(st, times, kind, xs, ys, zs, good, q_sites, q_times, out):
    """Global eta forward run answering point queries sorted by time."""
    qi = 0
    nq = q_times.shape[0]
    for e in range(times.shape[0]):
        while qi < nq and q_times[qi] < times[e]:
            out[qi] = st[q_sites[qi]]
            qi += 1
        if qi == nq:
            return
        _zeta_apply(e, st, kind, xs, ys, zs, good, 1)
    while qi < nq:
        out[qi] = st[q_sites[qi]]
        qi += 1


def forward_states(config0, stream, labels, sites, times):
    """Eta states at the space-time points ``(sites[i], times[i])``."""
    _check_labels(stream, labels)
    sites = np.asarray(sites, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    order = np.argsort(times, kind="stable")
    out = np.zeros(order.shape[0], dtype=np.uint8)
    _forward_queries(config0.states.copy(), stream.times, stream.kind, stream.x, stream.y,
                     stream.z, labels.good_event, sites[order], times[order], out)
    result = np.empty_like(out)
    result[order] = out
    return result


@njit(cache=True)
def _duality_batch(st0, times, kind, xs, ys, good, q_sites, q_times, member, t_entry,
                   budget, jt, js, jsign):
    """Per query: (dual meets occupied base, used a 1-arrow, cone replay state)."""
    n = q_sites.shape[0]
    meets = np.zeros(n, np.bool_)
    used = np.zeros(n, np.bool_)
    cone = np.zeros(n, np.int64)
    for i in range(n):
        member[:] = False
        nj, u = _dual_kernel(q_sites[i], q_times[i], times, kind, xs, ys, good, member,
                             jt, js, jsign)
        used[i] = u
        for y in range(member.shape[0]):
            if member[y] and st0[y] != 0:
                meets[i] = True
                break
        state, _, overflow = _cone_kernel(q_sites[i], q_times[i], times, kind, xs, ys, good,
                                          st0, t_entry, budget)
        cone[i] = -2 if overflow else state
    return meets, used, cone


@dataclass(frozen=True)
class DualityCheck:
    n_points: int
    occupied: int
    dual_misses: int          # occupied points whose dual set avoids the occupied base
    replay_mismatches: int
    single_only: int          # roots whose dual never crossed a 1-arrow
    single_only_mismatches: int   # among those, occupancy differs from "dual meets base"

    @property
    def ok(self):
        return self.dual_misses == 0 and self.replay_mismatches == 0 \
            and self.single_only_mismatches == 0


def check_duality(config0, stream, labels, sites, times, budget=DEFAULT_CONE_BUDGET):
    """Compare dual sets and cone replay with the global forward run at many points."""
    _check_labels(stream, labels)
    sites = np.asarray(sites, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    fwd = forward_states(config0, stream, labels, sites, times)
    n_sites = stream.geometry.total_sites
    n = len(stream)
    meets, used, cone = _duality_batch(
        config0.states, stream.times, stream.kind, stream.x, stream.y, labels.good_event,
        sites, times, np.zeros(n_sites, np.bool_), np.empty(n_sites), budget,
        np.zeros(n + 1), np.zeros(n + 1, np.int64), np.zeros(n + 1, np.int64))
    if np.any(cone == -2):
        raise ResourceError(f"an influence cone exceeded the budget of {budget} events")
    occ = fwd != 0
    single = ~used
    return DualityCheck(
        n_points=int(sites.shape[0]),
        occupied=int(occ.sum()),
        dual_misses=int(np.count_nonzero(occ & ~meets)),
        replay_mismatches=int(np.count_nonzero(cone != fwd)),
        single_only=int(single.sum()),
        single_only_mismatches=int(np.count_nonzero(single & (occ != meets))),
    )
