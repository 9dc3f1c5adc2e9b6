"""Block-construction constants and their Monte Carlo check.

``Lambda_-`` is the unit cube ``{0, 1}^d`` and ``Lambda_+`` the sites within
Euclidean distance 1 of it.  ``death_params`` fixes the window length ``T``
and the cross budget ``N`` so that every site of ``Lambda_+`` sees at least
one and fewer than ``N`` crosses with probability at least ``1 - eps/4``.
``a_plus_threshold`` is the payoff ``a11`` beyond which the rate bounds
``M1`` and ``M2`` guarantee the invasion event with probability ``1 - eps``.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from .errors import DomainError
from .lattice import TorusGeometry
from .payoff import PayoffMatrix, fitness_table
from .seeding import BLOCK, rng_for


@dataclass(frozen=True)
class BlockGeometry:
    d: int
    lambda_minus: tuple     # coordinate tuples
    lambda_plus: tuple

    @property
    def n_minus(self):
        return len(self.lambda_minus)

    @property
    def n_plus(self):
        return len(self.lambda_plus)


def cross_region(d):
    if not 1 <= d <= 4:
        raise DomainError("cross_region supports 1 <= d <= 4")
    minus = list(itertools.product((0, 1), repeat=d))
    plus = set(minus)
    for y in minus:
        for k in range(d):
            for s in (-1, 1):
                x = list(y)
                x[k] += s
                plus.add(tuple(x))
    # distance <= 1 to the cube only admits the cube and its face neighbors
    return BlockGeometry(d, tuple(sorted(minus)), tuple(sorted(plus)))


@dataclass(frozen=True)
class DeathParams:
    epsilon: float
    d: int
    a: float
    T: float
    N: int

    @property
    def p_no_cross(self):
        return math.exp(-self.T)

    @property
    def p_too_many(self):
        return float(stats.poisson.sf(self.N - 1, self.T))

    @property
    def p_good_site(self):
        """P(0 < N_x(0, T) < N) for one site."""
        return float(stats.poisson.cdf(self.N - 1, self.T) - stats.poisson.pmf(0, self.T))


def poisson_upper_tail(n, mean):
    """P(Poisson(mean) >= n) by summing the pmf from n upwards."""
    if n <= 0:
        return 1.0
    if mean <= 0:
        return 0.0
    term = math.exp(-mean + n * math.log(mean) - math.lgamma(n + 1))
    total = 0.0
    k = n
    # terms shrink geometrically once k exceeds the mean
    while term > 0 and (k <= mean or term > total * 1e-17):
        total += term
        k += 1
        term *= mean / k
    return total


def death_params(epsilon, d):
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    geo = cross_region(d)
    a = epsilon / (8 * geo.n_plus)
    T = -math.log(a)
    N = 1
    while poisson_upper_tail(N, T) > a:
        N += 1
    return DeathParams(float(epsilon), d, a, T, N)


def p_death_exact(params):
    return params.p_good_site ** cross_region(params.d).n_plus


def rate_bounds(spec, d, A):
    """(M1, M2): lower bound on 1-open arrow rate and upper bound on 2-open rate."""
    if A.a11 < max(A.a12, 0.0):
        raise DomainError("the bounds need a11 >= max(a12, 0)")
    k = 2 * d
    M1 = spec.lam / k * math.exp(A.a11 / k + (k - 1) * min(A.a12, 0.0) / k)
    M2 = spec.lam * math.exp(max(0.0, A.a21, A.a22))
    return M1, M2


def invasion_bound(N, n_plus, M1, M2):
    """N |Lambda_+| (M2 + |Lambda_+|) / M1."""
    return N * n_plus * (M2 + n_plus) / M1


def a_plus_threshold(epsilon, spec, d, a12, a21, a22, N=None):
    """Smallest a11 with N |Lambda_+| (M2 + |Lambda_+|) / M1 <= eps / 4."""
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    if N is None:
        N = death_params(epsilon, d).N
    n_plus = cross_region(d).n_plus
    k = 2 * d
    M2 = spec.lam * math.exp(max(0.0, a21, a22))
    needed = 4 * N * n_plus * (M2 + n_plus) / (epsilon * spec.lam / k)
    return k * (math.log(needed) - (k - 1) * min(a12, 0.0) / k)


@njit(cache=True)
def _block_trial(st, nbr, table, plus, is_plus, T, N, rng, b1, b2):
    """One trial; returns (death_event_ok, invade_event_ok)."""
    n = st.shape[0]
    K = nbr.shape[1]
    crosses = np.zeros(plus.shape[0], np.int64)
    t = 0.0
    checked_T = False
    ok = True
    while True:
        total = float(n)
        for x in range(n):
            b1[x] = 0.0
            b2[x] = 0.0
            if st[x] == 0:
                for k in range(K):
                    y = nbr[x, k]
                    s = st[y]
                    if s != 0:
                        c1 = 0
                        c2 = 0
                        for j in range(K):
                            w = st[nbr[y, j]]
                            if w == 1:
                                c1 += 1
                            elif w == 2:
                                c2 += 1
                        if s == 1:
                            b1[x] += table[1, c1, c2]
                        else:
                            b2[x] += table[2, c1, c2]
                b1[x] /= K
                b2[x] /= K
                total += b1[x] + b2[x]
        t_next = t + rng.exponential(1.0 / total)
        if not checked_T and t_next >= T:
            checked_T = True
            for i in range(plus.shape[0]):
                if st[plus[i]] != 1:
                    ok = False
            if not ok:
                break
        if t_next >= 2.0 * T:
            break
        t = t_next
        u = rng.random() * total
        if u < n:
            x = int(u)
            if t < T and is_plus[x] >= 0:
                crosses[is_plus[x]] += 1
            st[x] = 0
            continue
        u -= n
        for x in range(n):
            if u < b1[x]:
                st[x] = 1
                break
            u -= b1[x]
            if u < b2[x]:
                st[x] = 2
                if checked_T and is_plus[x] >= 0:
                    ok = False
                break
            u -= b2[x]
        if not ok:
            break
    # every exit happens at or after T, so the cross counts are complete
    death_ok = True
    for i in range(plus.shape[0]):
        if crosses[i] == 0 or crosses[i] >= N:
            death_ok = False
    return death_ok, ok and checked_T


@dataclass(frozen=True)
class BlockMCResult:
    trials: int
    p_death: float
    p_death_se: float
    p_death_exact: float
    p_invade: float
    p_invade_se: float
    a11_used: float
    threshold: float
    guaranteed: bool          # a11_used >= threshold
    side: int


def verify_block_mc(epsilon, spec, d, A, a11_used, trials, seed, side=None):
    """Monte Carlo of the cross-count event and the invasion event.

    Lambda_- starts full of 1s and every other site holds a 2.  Crosses fall
    at rate 1 on every site, empty or not, so the cross counts over Lambda_+
    are exact Poisson variables.
    """
    params = death_params(epsilon, d)
    geo_b = cross_region(d)
    if side is None:
        side = 16 if d == 1 else 8
    geo = TorusGeometry.cube(d, side)
    center = side // 2 - 1
    plus = np.array([geo.index(tuple(c + center for c in x)) for x in geo_b.lambda_plus],
                    dtype=np.int64)
    minus = np.array([geo.index(tuple(c + center for c in x)) for x in geo_b.lambda_minus],
                     dtype=np.int64)
    is_plus = np.full(geo.total_sites, -1, dtype=np.int64)
    is_plus[plus] = np.arange(plus.shape[0])
    matrix = PayoffMatrix(a11_used, A.a12, A.a21, A.a22)
    table = fitness_table(matrix, spec, geo.degree)
    start = np.full(geo.total_sites, 2, dtype=np.uint8)
    start[minus] = 1
    rng = rng_for(seed, BLOCK)
    b1 = np.zeros(geo.total_sites)
    b2 = np.zeros(geo.total_sites)
    n_death = 0
    n_inv = 0
    for _ in range(trials):
        dok, iok = _block_trial(start.copy(), geo.neighbor_table, table, plus, is_plus,
                                params.T, params.N, rng, b1, b2)
        n_death += dok
        n_inv += iok
    pd = n_death / trials
    pi = n_inv / trials
    thr = a_plus_threshold(epsilon, spec, d, A.a12, A.a21, A.a22, params.N)
    return BlockMCResult(trials, pd, math.sqrt(pd * (1 - pd) / trials), p_death_exact(params),
                         pi, math.sqrt(pi * (1 - pi) / trials), float(a11_used), thr,
                         bool(a11_used >= thr), side)
