"""Harris graphical representation with uniform thinning marks.

Arrows along every directed edge arrive at rate ``M / 2d`` and carry a mark
``U ~ uniform(0, M]``; crosses (death marks) arrive at rate 1 per site.
Optionally each arrow also carries ``V``, a uniformly chosen neighbor of its
tail.  An arrow from a type-i tail into an empty head is used iff ``U`` does
not exceed the tail's current birth rate, so a single stream drives any
number of processes whose rates stay below ``M``.

The stream is generated in slabs ``[k, k + 1)`` of unit length.  Slab ``k``
is the superposition of all per-edge and per-site Poisson processes,
sampled from its own Philox stream keyed by ``(seed, GRAPHICAL_SLAB, k)``,
so the stream is a pure function of ``(seed, geometry, M, T)`` and a longer
window extends a shorter one.

Binary dump format (all little-endian)::

    magic    8 bytes  b"MTCPEVS\\0"
    version  u32      1
    d        u32
    sides    u32 * d
    seed     u64
    M        f64
    T        f64
    with_V   u8
    count    u64      number of events n
    times    f64 * n
    sites    i32 * n
    kinds    i8 * n   0..2d-1 arrow direction, 2d death mark
    U        f64 * n  NaN for death marks
    V        i8 * n   neighbor index of the tail, -1 when absent
"""

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from .direct import TrajectoryStats
from .errors import DomainError
from .lattice import Configuration, TorusGeometry
from .payoff import fitness_table, response
from .seeding import GRAPHICAL_SLAB, rng_for

_MAGIC = b"MTCPEVS\0"
_VERSION = 1


def max_rate(spec, *matrices):
    """Thinning ceiling: lambda * g(max(0, every entry of every matrix))."""
    if not matrices:
        raise DomainError("need at least one payoff matrix")
    top = max([0.0] + [v for m in matrices for v in m.entries()])
    return spec(top)


@dataclass(frozen=True, eq=False)
class EventStream:
    geometry: TorusGeometry
    T: float
    M: float
    seed: int
    with_V: bool
    times: np.ndarray
    sites: np.ndarray
    kinds: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __len__(self):
        return int(self.times.shape[0])

    @property
    def death_kind(self):
        return self.geometry.degree

    @property
    def is_death(self):
        return self.kinds == self.death_kind

    @property
    def is_arrow(self):
        return self.kinds != self.death_kind

    @cached_property
    def heads(self):
        """Head site of every arrow (the site itself for death marks)."""
        nbr = self.geometry.neighbor_table
        k = np.minimum(self.kinds, self.death_kind - 1).astype(np.int64)
        return np.where(self.is_arrow, nbr[self.sites, k], self.sites).astype(np.int32)

    def edge_times(self, x, direction):
        sel = (self.sites == x) & (self.kinds == direction)
        return self.times[sel]

    def death_times(self, x):
        return self.times[(self.sites == x) & self.is_death]

    @cached_property
    def fingerprint(self):
        h = hashlib.sha256()
        for a in (self.times, self.sites, self.kinds, self.U, self.V):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.geometry.sides, self.T, self.M, self.seed)).encode())
        return h.hexdigest()

    def dump(self, path):
        d = self.geometry.d
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _VERSION, d))
            fh.write(struct.pack(f"<{d}I", *self.geometry.sides))
            fh.write(struct.pack("<QddBQ", int(self.seed), float(self.M), float(self.T),
                                 int(self.with_V), len(self)))
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(self.sites.astype("<i4").tobytes())
            fh.write(self.kinds.astype("<i1").tobytes())
            fh.write(self.U.astype("<f8").tobytes())
            fh.write(self.V.astype("<i1").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ValueError("not an event-stream dump")
            version, d = struct.unpack("<II", fh.read(8))
            if version != _VERSION:
                raise ValueError(f"unsupported dump version {version}")
            sides = struct.unpack(f"<{d}I", fh.read(4 * d))
            seed, M, T, with_V, n = struct.unpack("<QddBQ", fh.read(struct.calcsize("<QddBQ")))

            def arr(dtype, size):
                return np.frombuffer(fh.read(size * n), dtype=dtype).copy()

            times = arr("<f8", 8).astype(np.float64)
            sites = arr("<i4", 4).astype(np.int32)
            kinds = arr("<i1", 1).astype(np.int8)
            U = arr("<f8", 8).astype(np.float64)
            V = arr("<i1", 1).astype(np.int8)
        return cls(TorusGeometry(sides), T, M, seed, bool(with_V), times, sites, kinds, U, V)


def _slab(geometry, M, t0, t1, seed, k, with_V):
    rng = rng_for(seed, GRAPHICAL_SLAB, k)
    n_sites = geometry.total_sites
    K = geometry.degree
    n = int(rng.poisson(n_sites * (M + 1.0) * (t1 - t0)))
    times = np.sort(t0 + (t1 - t0) * rng.random(n))
    sites = rng.integers(0, n_sites, n).astype(np.int32)
    death = rng.random(n) < 1.0 / (M + 1.0)
    kinds = np.where(death, K, rng.integers(0, K, n)).astype(np.int8)
    U = M * (1.0 - rng.random(n))
    U[death] = np.nan
    V = rng.integers(0, K, n).astype(np.int8) if with_V else np.full(n, -1, np.int8)
    if with_V:
        V[death] = -1
    return times, sites, kinds, U, V


def iter_slabs(geometry, M, T, seed, with_V=False):
    """Yield the stream slab by slab as (times, sites, kinds, U, V) tuples."""
    for k in range(int(math.ceil(T))):
        t0, t1 = float(k), min(float(k + 1), float(T))
        if t1 > t0:
            yield _slab(geometry, M, t0, t1, seed, k, with_V)


def build_events(geometry, M, T, seed, with_V=False):
    if not M > 0:
        raise DomainError("ceiling rate must be positive")
    if T < 0:
        raise DomainError("window length must be nonnegative")
    parts = list(iter_slabs(geometry, M, T, seed, with_V))
    if parts:
        cols = [np.concatenate(c) for c in zip(*parts)]
    else:
        cols = [np.zeros(0), np.zeros(0, np.int32), np.zeros(0, np.int8),
                np.zeros(0), np.zeros(0, np.int8)]
    for c in cols:
        c.setflags(write=False)
    return EventStream(geometry, float(T), float(M), int(seed), bool(with_V), *cols)


def make_stream(geometry, M, events, T=None, seed=-1):
    """Hand-built stream from (time, site, kind, U[, V]) tuples, for tests and replay."""
    events = sorted(events, key=lambda e: e[0])
    n = len(events)
    times = np.array([e[0] for e in events], dtype=np.float64)
    sites = np.array([e[1] for e in events], dtype=np.int32)
    kinds = np.array([e[2] for e in events], dtype=np.int8)
    U = np.array([e[3] if e[3] is not None else np.nan for e in events], dtype=np.float64)
    V = np.array([e[4] if len(e) > 4 else -1 for e in events], dtype=np.int8)
    if T is None:
        T = float(times[-1]) + 1.0 if n else 0.0
    with_V = bool(n and np.all(V[kinds != geometry.degree] >= 0))
    return EventStream(geometry, float(T), float(M), seed, with_V,
                       times, sites, kinds, U, V)


@njit(cache=True)
def _tail_counts(x, states, nbr):
    n1 = 0
    n2 = 0
    for k in range(nbr.shape[1]):
        s = states[nbr[x, k]]
        if s == 1:
            n1 += 1
        elif s == 2:
            n2 += 1
    return n1, n2


@njit(cache=True)
def _apply(e, states, nbr, table, times, sites, kinds, U):
    """Apply event ``e``; return the changed site or -1."""
    K = nbr.shape[1]
    x = sites[e]
    k = kinds[e]
    if k == K:
        if states[x] != 0:
            states[x] = 0
            return x
        return -1
    i = states[x]
    if i == 0:
        return -1
    y = nbr[x, k]
    if states[y] != 0:
        return -1
    n1, n2 = _tail_counts(x, states, nbr)
    if U[e] <= table[i, n1, n2]:
        states[y] = i
        return y
    return -1


@njit(cache=True)
def _evolve(states, nbr, table, times, sites, kinds, U, t_end, sample_times, counts_out,
            snap_row, snaps_out, change_log):
    n1 = 0
    n2 = 0
    for x in range(states.shape[0]):
        if states[x] == 1:
            n1 += 1
        elif states[x] == 2:
            n2 += 1
    si = 0
    n_changes = 0
    logging = change_log.shape[0] > 0
    for e in range(times.shape[0]):
        t = times[e]
        if t > t_end:
            break
        while si < sample_times.shape[0] and sample_times[si] < t:
            counts_out[si, 0] = n1
            counts_out[si, 1] = n2
            if snap_row[si] >= 0:
                snaps_out[snap_row[si], :] = states
            si += 1
        old_y = -1
        x = sites[e]
        if kinds[e] == nbr.shape[1]:
            old = states[x]
        else:
            old = 0
        y = _apply(e, states, nbr, table, times, sites, kinds, U)
        if y >= 0:
            new = states[y]
            if new == 0:
                if old == 1:
                    n1 -= 1
                else:
                    n2 -= 1
            elif new == 1:
                n1 += 1
            else:
                n2 += 1
            if logging and n_changes < change_log.shape[0]:
                change_log[n_changes, 0] = e
                change_log[n_changes, 1] = y
                change_log[n_changes, 2] = new
            n_changes += 1
    while si < sample_times.shape[0]:
        counts_out[si, 0] = n1
        counts_out[si, 1] = n2
        if snap_row[si] >= 0:
            snaps_out[snap_row[si], :] = states
        si += 1
    return n_changes


def _sample_grid(horizon, sample_times, snapshot_times):
    if sample_times is None:
        sample_times = np.linspace(0.0, horizon, 101) if horizon > 0 else np.array([0.0])
    grid = np.union1d(np.asarray(sample_times, float), np.asarray(snapshot_times, float))
    grid = np.union1d(grid, [0.0])
    grid = grid[(grid >= 0) & (grid <= horizon)]
    snaps = set(float(s) for s in snapshot_times)
    snap_row = np.full(grid.shape[0], -1, dtype=np.int64)
    rows = 0
    for i, g in enumerate(grid):
        if float(g) in snaps:
            snap_row[i] = rows
            rows += 1
    return grid, snap_row, rows


def check_ceiling(stream, table):
    top = float(table.max())
    if stream.M < top * (1 - 1e-12):
        raise DomainError(f"stream ceiling M={stream.M} is below the largest birth rate {top}; "
                          "thinning would be biased")


def evolve(config0, stream, matrix, spec, horizon=None, sample_times=None, snapshot_times=(),
           table=None, log_changes=False):
    """Run the process with payoff ``matrix`` on ``stream`` up to ``horizon``.

    Returns :class:`TrajectoryStats`; with ``log_changes`` also an array of
    (event index, site, new state) rows, one per state change.
    """
    if config0.geometry != stream.geometry:
        raise DomainError("configuration and stream live on different lattices")
    if table is None:
        response(spec.g)
        table = fitness_table(matrix, spec, stream.geometry.degree)
    check_ceiling(stream, table)
    horizon = stream.T if horizon is None else float(horizon)
    grid, snap_row, rows = _sample_grid(horizon, sample_times, snapshot_times)
    states = config0.states.copy()
    counts_out = np.zeros((grid.shape[0], 2), dtype=np.int64)
    snaps_out = np.zeros((rows, states.shape[0]), dtype=np.uint8)
    cap = len(stream) if log_changes else 0
    log = np.zeros((cap, 3), dtype=np.int64)
    n_changes = _evolve(states, stream.geometry.neighbor_table, table, stream.times,
                        stream.sites, stream.kinds, stream.U, horizon, grid, counts_out,
                        snap_row, snaps_out, log)
    geo = stream.geometry
    snapshots = {float(grid[i]): Configuration(geo, snaps_out[snap_row[i]].copy())
                 for i in range(grid.shape[0]) if snap_row[i] >= 0}
    stats = TrajectoryStats(grid, counts_out[:, 0].copy(), counts_out[:, 1].copy(),
                            geo.total_sites, Configuration(geo, states), horizon,
                            int(n_changes), bool(counts_out[-1].sum() == 0), snapshots)
    if log_changes:
        return stats, log[:n_changes]
    return stats
