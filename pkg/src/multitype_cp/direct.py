"""Exact continuous-time simulation by direct rate bookkeeping.

Each site carries its total transition rate (death rate 1 if occupied, the
summed birth rates into it if empty, or the switching rate in a voter game).
After an event at ``x`` only fitnesses in ``{x} u N(x)`` and rates within
graph distance two of ``x`` change; exactly those are recomputed.  Event
selection goes through per-block partial sums (blocks of about sqrt(N)
sites), refreshed from scratch every ``N`` events to stop round-off drift.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError
from .lattice import Configuration
from .payoff import fitness_table, voter_fitness_table
from .seeding import DIRECT, rng_for

CONTACT, BIRTH_DEATH, DEATH_BIRTH = 0, 1, 2
_MODES = {"contact": CONTACT, "birth_death": BIRTH_DEATH, "death_birth": DEATH_BIRTH}

# kernel exit codes
HORIZON, ABSORBED, MAX_EVENTS, NEGATIVE_FITNESS, CACHE_MISMATCH = 0, 1, 2, 3, 4


@njit(cache=True)
def _fitness_at(x, states, nbr, table):
    s = states[x]
    if s == 0:
        return 0.0
    n1 = 0
    n2 = 0
    for k in range(nbr.shape[1]):
        sy = states[nbr[x, k]]
        if sy == 1:
            n1 += 1
        elif sy == 2:
            n2 += 1
    return table[s, n1, n2]


@njit(cache=True)
def _rate_at(x, states, phi, nbr, mode):
    K = nbr.shape[1]
    s = states[x]
    if mode == 0:
        if s != 0:
            return 1.0
        b1 = 0.0
        b2 = 0.0
        for k in range(K):
            y = nbr[x, k]
            sy = states[y]
            if sy == 1:
                b1 += phi[y]
            elif sy == 2:
                b2 += phi[y]
        return b1 / K + b2 / K
    other = 3 - s
    num = 0.0
    den = 0.0
    for k in range(K):
        y = nbr[x, k]
        if states[y] == other:
            num += phi[y]
        den += phi[y]
    if mode == 1:
        return num / K
    if den > 0:
        return num / den
    return 0.0


@njit(cache=True)
def _refresh(states, phi, rate, bsum, bsize, nbr, table, mode):
    n = states.shape[0]
    bad = False
    for x in range(n):
        phi[x] = _fitness_at(x, states, nbr, table)
        if mode != 0 and phi[x] < 0:
            bad = True
    for x in range(n):
        rate[x] = _rate_at(x, states, phi, nbr, mode)
    total = 0.0
    for b in range(bsum.shape[0]):
        s = 0.0
        for x in range(b * bsize, min(n, (b + 1) * bsize)):
            s += rate[x]
        bsum[b] = s
        total += s
    return total, bad


@njit(cache=True)
def _coherent(states, phi, rate, nbr, table, mode):
    n = states.shape[0]
    for x in range(n):
        if phi[x] != _fitness_at(x, states, nbr, table):
            return False
    for x in range(n):
        if rate[x] != _rate_at(x, states, phi, nbr, mode):
            return False
    return True


@njit(cache=True)
def _advance(states, phi, rate, bsum, bsize, nbr, ball, table, mode, counts, t, total,
             t_end, max_events, rng, sample_times, si, counts_out, snap_row, snaps_out,
             check_cache):
    """Advance until ``t_end``, absorption or ``max_events`` events.

    Returns (t, total, si, n_events, status, last_site, last_state).
    """
    n = states.shape[0]
    K = nbr.shape[1]
    nb = bsum.shape[0]
    n_events = 0
    since_refresh = 0
    last_site = -1
    last_state = -1
    status = HORIZON
    while True:
        if n_events >= max_events:
            status = MAX_EVENTS
            break
        if total <= 1e-12 * n:
            total, bad = _refresh(states, phi, rate, bsum, bsize, nbr, table, mode)
            since_refresh = 0
        absorbed = total <= 0.0
        if mode == 0 and counts[0] + counts[1] == 0:
            absorbed = True
        if absorbed:
            while si < sample_times.shape[0] and sample_times[si] <= t_end:
                counts_out[si, 0] = counts[0]
                counts_out[si, 1] = counts[1]
                if snap_row[si] >= 0:
                    snaps_out[snap_row[si], :] = states
                si += 1
            status = ABSORBED
            break
        tn = t + rng.exponential(1.0) / total
        while si < sample_times.shape[0] and sample_times[si] < tn and sample_times[si] <= t_end:
            counts_out[si, 0] = counts[0]
            counts_out[si, 1] = counts[1]
            if snap_row[si] >= 0:
                snaps_out[snap_row[si], :] = states
            si += 1
        if tn > t_end:
            t = t_end
            status = HORIZON
            break
        t = tn
        # pick a site proportionally to its rate; a zero-rate landing can only
        # come from round-off in the partial sums, so refresh them and redraw
        x = -1
        while x < 0:
            u = rng.random() * total
            b = 0
            while b < nb - 1 and u >= bsum[b]:
                u -= bsum[b]
                b += 1
            x = b * bsize
            hi = min(n, (b + 1) * bsize)
            while x < hi - 1 and u >= rate[x]:
                u -= rate[x]
                x += 1
            if rate[x] <= 0.0:
                x = -1
                total, bad = _refresh(states, phi, rate, bsum, bsize, nbr, table, mode)
                since_refresh = 0
        s = states[x]
        if mode == 0:
            if s != 0:
                new = 0
            else:
                b1 = 0.0
                for k in range(K):
                    y = nbr[x, k]
                    if states[y] == 1:
                        b1 += phi[y]
                new = 1 if rng.random() * rate[x] < b1 / K else 2
        else:
            new = 3 - s
        if s != 0:
            counts[s - 1] -= 1
        if new != 0:
            counts[new - 1] += 1
        states[x] = new
        last_site = x
        last_state = new
        n_events += 1
        # fitness of x and its neighbors
        bad = False
        phi[x] = _fitness_at(x, states, nbr, table)
        if mode != 0 and phi[x] < 0:
            bad = True
        for k in range(K):
            y = nbr[x, k]
            phi[y] = _fitness_at(y, states, nbr, table)
            if mode != 0 and phi[y] < 0:
                bad = True
        if bad:
            status = NEGATIVE_FITNESS
            break
        # rates within distance two
        for j in range(ball.shape[1]):
            z = ball[x, j]
            r = _rate_at(z, states, phi, nbr, mode)
            d = r - rate[z]
            if d != 0.0:
                rate[z] = r
                bsum[z // bsize] += d
                total += d
        since_refresh += 1
        if since_refresh >= n:
            total, bad = _refresh(states, phi, rate, bsum, bsize, nbr, table, mode)
            since_refresh = 0
        if check_cache and not _coherent(states, phi, rate, nbr, table, mode):
            status = CACHE_MISMATCH
            break
    return t, total, si, n_events, status, last_site, last_state


@dataclass
class Event:
    time: float
    site: int
    kind: str
    new_state: int


class Absorbed:
    """Marker returned by :func:`step` once no event can occur."""

    def __repr__(self):
        return "Absorbed"


ABSORBED_MARKER = Absorbed()


@dataclass
class TrajectoryStats:
    times: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    total_sites: int
    final: Configuration
    t_final: float
    n_events: int = 0
    absorbed: bool = False
    snapshots: dict = field(default_factory=dict)

    @property
    def density1(self):
        return self.n1 / self.total_sites

    @property
    def density2(self):
        return self.n2 / self.total_sites

    @property
    def occupied_density(self):
        return (self.n1 + self.n2) / self.total_sites


class SimState:
    """Process state plus rate caches and a private Philox stream."""

    def __init__(self, config, table, mode=CONTACT, seed=0, rng=None, check_cache=False):
        geo = config.geometry
        self.geometry = geo
        self.states = config.states.copy()
        self.nbr = geo.neighbor_table
        self.ball = geo.ball2_table
        self.table = np.ascontiguousarray(table, dtype=np.float64)
        self.mode = mode
        self.time = 0.0
        self.rng = rng if rng is not None else rng_for(seed, DIRECT)
        self.check_cache = check_cache
        n = geo.total_sites
        self.phi = np.zeros(n)
        self.rate = np.zeros(n)
        self.bsize = max(1, int(np.ceil(np.sqrt(n))))
        self.bsum = np.zeros((n + self.bsize - 1) // self.bsize)
        self.counts = np.array([np.count_nonzero(self.states == 1),
                                np.count_nonzero(self.states == 2)], dtype=np.int64)
        self.total, bad = _refresh(self.states, self.phi, self.rate, self.bsum, self.bsize,
                                   self.nbr, self.table, mode)
        if bad:
            raise DomainError("negative fitness in the initial configuration")
        self.n_events = 0

    @classmethod
    def contact(cls, config, matrix, spec, seed=0, **kw):
        table = fitness_table(matrix, spec, config.geometry.degree)
        return cls(config, table, CONTACT, seed=seed, **kw)

    @classmethod
    def voter_game(cls, config, matrix, selection, mode, seed=0, **kw):
        if np.any(config.states == 0):
            raise DomainError("voter games need a configuration without vacancies")
        if mode not in ("birth_death", "death_birth"):
            raise DomainError(f"unknown updating mode {mode!r}")
        table = voter_fitness_table(matrix, selection, config.geometry.degree)
        return cls(config, table, _MODES[mode], seed=seed, **kw)

    @property
    def config(self):
        return Configuration(self.geometry, self.states.copy())

    def _call(self, t_end, max_events, sample_times, counts_out, snap_row, snaps_out, si=0):
        (t, total, si, n_ev, status, site, new) = _advance(
            self.states, self.phi, self.rate, self.bsum, self.bsize, self.nbr, self.ball,
            self.table,
            self.mode, self.counts, self.time, self.total, t_end, max_events, self.rng,
            sample_times, si, counts_out, snap_row, snaps_out, self.check_cache)
        self.time, self.total = t, total
        self.n_events += n_ev
        if status == NEGATIVE_FITNESS:
            raise DomainError("a voter-game fitness became negative")
        if status == CACHE_MISMATCH:
            raise AssertionError("cached rates diverged from freshly computed rates")
        return status, si, site, new

    def rates_are_coherent(self):
        return bool(_coherent(self.states, self.phi, self.rate, self.nbr, self.table, self.mode))


_NO_SAMPLES = np.zeros(0)
_NO_ROWS = np.zeros(0, dtype=np.int64)


def step(state):
    """Sample and apply the next event; :data:`ABSORBED_MARKER` if none can occur."""
    status, _, site, new = state._call(np.inf, 1, _NO_SAMPLES, np.zeros((0, 2), np.int64),
                                       _NO_ROWS, np.zeros((0, 0), np.uint8))
    if status == ABSORBED:
        return ABSORBED_MARKER
    if state.mode == CONTACT:
        kind = "death" if new == 0 else "birth"
    else:
        kind = "flip"
    return Event(state.time, int(site), kind, int(new))


def run(state, horizon, sample_times=None, snapshot_times=()):
    """Advance ``state`` to time ``horizon`` (or absorption) and record counts.

    ``sample_times`` defaults to 101 equally spaced times on
    ``[state.time, horizon]``; the state at ``state.time`` is always recorded.
    ``snapshot_times`` are added to the sample grid and full configurations
    are kept for them.
    """
    if horizon < state.time:
        raise DomainError("horizon is in the past")
    if sample_times is None:
        sample_times = np.linspace(state.time, horizon, 101) if horizon > state.time \
            else np.array([state.time])
    grid = np.union1d(np.asarray(sample_times, dtype=float), np.asarray(snapshot_times, float))
    grid = np.union1d(grid, [state.time])
    grid = grid[(grid >= state.time) & (grid <= horizon)]
    snaps = set(float(s) for s in snapshot_times)
    snap_row = np.full(grid.shape[0], -1, dtype=np.int64)
    rows = 0
    for i, g in enumerate(grid):
        if float(g) in snaps:
            snap_row[i] = rows
            rows += 1
    counts_out = np.zeros((grid.shape[0], 2), dtype=np.int64)
    snaps_out = np.zeros((rows, state.geometry.total_sites), dtype=np.uint8)
    status, si, _, _ = state._call(float(horizon), np.iinfo(np.int64).max, grid, counts_out,
                                   snap_row, snaps_out)
    absorbed = status == ABSORBED
    if si < grid.shape[0]:  # only possible at the horizon boundary itself
        counts_out[si:] = state.counts
        for i in range(si, grid.shape[0]):
            if snap_row[i] >= 0:
                snaps_out[snap_row[i]] = state.states
    snapshots = {float(grid[i]): Configuration(state.geometry, snaps_out[snap_row[i]].copy())
                 for i in range(grid.shape[0]) if snap_row[i] >= 0}
    return TrajectoryStats(grid, counts_out[:, 0].copy(), counts_out[:, 1].copy(),
                           state.geometry.total_sites, state.config, state.time,
                           state.n_events, absorbed, snapshots)


def simulate(config, matrix, spec, horizon, seed=0, **kw):
    """Convenience wrapper: build a contact-model state and run it."""
    return run(SimState.contact(config, matrix, spec, seed=seed), horizon, **kw)


def run_voter_game(config, matrix, selection, mode, horizon, seed=0, **kw):
    state = SimState.voter_game(config, matrix, selection, mode, seed=seed)
    return run(state, horizon, **kw)
