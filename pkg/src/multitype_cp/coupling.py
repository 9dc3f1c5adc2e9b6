"""Monotone two-matrix coupling on a shared graphical representation.

Two processes, one with matrix ``A`` and one with ``Abar``, read the same
event stream, each deciding arrow openness from its own pre-event state.
When the payoff entries are ordered as checked by :func:`ordering_holds`,
the type-1 set of the barred process contains that of the plain process and
its type-2 set is contained in the other's.  The kernel checks both
inclusions at every site that changed, after every event.  Since the
inclusions hold initially and only changed sites can break them, this is
equivalent to a full check after every event.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .direct import TrajectoryStats
from .errors import DomainError
from .graphical import _apply, _sample_grid, build_events, check_ceiling, max_rate
from .lattice import Configuration
from .payoff import fitness_table

# mutation hooks for negative controls
NO_MUTATION = 0
SUPPRESS_BAR_TYPE1_BIRTHS = 1

ONE_INCLUSION = "type-1 set of the barred process contains the plain one"
TWO_INCLUSION = "type-2 set of the barred process is contained in the plain one"


def ordering_holds(A, Abar):
    return (Abar.a11 >= A.a11 >= 0 and Abar.a12 >= 0 >= A.a12
            and Abar.a21 <= 0 <= A.a21 and Abar.a22 <= 0 <= A.a22)


@dataclass(frozen=True)
class CouplingReport:
    verified: bool
    events_checked: int
    first_violation: tuple = None   # (time, site, which inclusion)


def inclusions_hold(config, configbar):
    s, b = config.states, configbar.states
    return bool(np.all(b[s == 1] == 1) and np.all(s[b == 2] == 2))


@njit(cache=True)
def _violation(y, s, b):
    if y < 0:
        return 0
    if s[y] == 1 and b[y] != 1:
        return 1
    if b[y] == 2 and s[y] != 2:
        return 2
    return 0


@njit(cache=True)
def _tally(n, off, y, st, old):
    if y >= 0:
        if st[y] == 0:
            n[off + old - 1] -= 1
        else:
            n[off + np.int64(st[y]) - 1] += 1


@njit(cache=True)
def _coupled(s, b, nbr, table, table_bar, times, sites, kinds, U, t_end, grid, counts,
             mutation):
    K = nbr.shape[1]
    n = np.zeros(4, dtype=np.int64)
    for x in range(s.shape[0]):
        if s[x] == 1:
            n[0] += 1
        elif s[x] == 2:
            n[1] += 1
        if b[x] == 1:
            n[2] += 1
        elif b[x] == 2:
            n[3] += 1
    si = 0
    checked = 0
    for e in range(times.shape[0]):
        t = times[e]
        if t > t_end:
            break
        while si < grid.shape[0] and grid[si] < t:
            counts[si, :] = n
            si += 1
        x = sites[e]
        old_s = np.int64(s[x])
        old_b = np.int64(b[x])
        ys = _apply(e, s, nbr, table, times, sites, kinds, U)
        skip_bar = (mutation == SUPPRESS_BAR_TYPE1_BIRTHS and kinds[e] != K and b[x] == 1)
        yb = -1
        if not skip_bar:
            yb = _apply(e, b, nbr, table_bar, times, sites, kinds, U)
        _tally(n, 0, ys, s, old_s)
        _tally(n, 2, yb, b, old_b)
        checked += 1
        v = _violation(ys, s, b)
        site = ys
        if v == 0:
            v = _violation(yb, s, b)
            site = yb
        if v != 0:
            while si < grid.shape[0] and grid[si] <= t:
                counts[si, :] = n
                si += 1
            return checked, e, site, v, si
    while si < grid.shape[0]:
        counts[si, :] = n
        si += 1
    return checked, -1, -1, 0, si


def coupled_run(config0, configbar0, A, Abar, spec, T, seed, stream=None, sample_times=None,
                mutation=NO_MUTATION):
    """Evolve the plain and barred processes on one stream, checking inclusions.

    Returns ``(trajectory, trajectory_bar, report)``.  A violation stops the
    run; the trajectories then end at the violating event.
    """
    if not ordering_holds(A, Abar):
        raise DomainError("payoff matrices are not ordered as the coupling requires")
    if config0.geometry != configbar0.geometry:
        raise DomainError("initial configurations live on different lattices")
    if not inclusions_hold(config0, configbar0):
        raise DomainError("initial configurations violate the required inclusions")
    geo = config0.geometry
    if stream is None:
        stream = build_events(geo, max_rate(spec, A, Abar), T, seed)
    table = fitness_table(A, spec, geo.degree)
    table_bar = fitness_table(Abar, spec, geo.degree)
    check_ceiling(stream, table)
    check_ceiling(stream, table_bar)
    grid, _, _ = _sample_grid(float(T), sample_times, ())
    s = config0.states.copy()
    b = configbar0.states.copy()
    counts = np.zeros((grid.shape[0], 4), dtype=np.int64)
    checked, e, site, v, si = _coupled(s, b, geo.neighbor_table, table, table_bar,
                                       stream.times, stream.sites, stream.kinds, stream.U,
                                       float(T), grid, counts, mutation)
    violation = None
    t_final = float(T)
    if v:
        t_final = float(stream.times[e])
        violation = (t_final, int(site), ONE_INCLUSION if v == 1 else TWO_INCLUSION)
        grid, counts = grid[:si], counts[:si]
    traj = TrajectoryStats(grid, counts[:, 0].copy(), counts[:, 1].copy(), geo.total_sites,
                           Configuration(geo, s), t_final, int(checked))
    traj_bar = TrajectoryStats(grid, counts[:, 2].copy(), counts[:, 3].copy(), geo.total_sites,
                               Configuration(geo, b), t_final, int(checked))
    return traj, traj_bar, CouplingReport(violation is None, int(checked), violation)
