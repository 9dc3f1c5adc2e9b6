"""Payoffs, fitness and transition rates.

Every kernel in the package reads fitness from a table indexed by
``(type, n1, n2)``, the type of a player and the numbers of type 1 and
type 2 players among its ``2d`` neighbors.  The table entries are computed
with exactly the same floating point operations as :func:`fitness`, so the
per-site reference functions here and the compiled engines agree bit for bit.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .lattice import EMPTY

_RESPONSES = {"exp": math.exp}


def register_response(name, func, probe=np.linspace(-20.0, 20.0, 401)):
    """Register a birth-rate response function ``g``.

    ``g`` must be strictly increasing with ``g(0) = 1``, tend to 0 at
    minus infinity and to infinity at plus infinity.  These are spot-checked
    on ``probe`` and at +-1000; a failing function is not registered.
    """
    def value(x):
        try:
            return float(func(float(x)))
        except OverflowError:
            return math.inf if x > 0 else 0.0

    with np.errstate(over="ignore"):
        vals = np.array([value(x) for x in probe])
        lo, hi = value(-1000.0), value(1000.0)
    if abs(float(func(0.0)) - 1.0) > 1e-12:
        raise DomainError(f"g(0) must be 1, got {func(0.0)}")
    if not np.all(np.diff(vals) > 0):
        raise DomainError("g must be strictly increasing on the probe grid")
    if np.any(vals <= 0):
        raise DomainError("g must be positive")
    if not (lo < 1e-3 and hi > 1e3):
        raise DomainError("g must tend to 0 at -inf and to +inf at +inf")
    _RESPONSES[name] = func
    return func


def response(name):
    try:
        return _RESPONSES[name]
    except KeyError:
        raise DomainError(f"unknown response function {name!r}") from None


@dataclass(frozen=True)
class PayoffMatrix:
    a11: float = 0.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 0.0

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def zeros(cls):
        return cls()

    def entry(self, i, j):
        """a_ij, with a_i0 = 0 for empty neighbors."""
        if j == EMPTY:
            return 0.0
        return ((self.a11, self.a12), (self.a21, self.a22))[i - 1][j - 1]

    def entries(self):
        return (self.a11, self.a12, self.a21, self.a22)

    def relabeled(self):
        """The matrix seen after swapping the names of types 1 and 2."""
        return PayoffMatrix(self.a22, self.a21, self.a12, self.a11)


@dataclass(frozen=True)
class FitnessSpec:
    lam: float
    g: str = "exp"

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError("natural birth rate must be positive")
        response(self.g)

    def __call__(self, payoff_value):
        return self.lam * response(self.g)(payoff_value)


@dataclass(frozen=True)
class SelectionSpec:
    w: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise DomainError("selection strength must lie in [0, 1]")


def _payoff_from_counts(matrix, i, n1, n2, degree):
    f1 = n1 / degree
    f2 = n2 / degree
    return matrix.entry(i, 1) * f1 + matrix.entry(i, 2) * f2


def payoff(config, site, matrix):
    i = config[site]
    if i == EMPTY:
        raise DomainError(f"site {site} is empty; payoff undefined")
    _, n1, n2 = config.neighbor_counts(site)
    return _payoff_from_counts(matrix, i, n1, n2, config.geometry.degree)


def fitness(config, site, matrix, spec):
    return spec(payoff(config, site, matrix))


def birth_rate_into(config, x, i, matrix, spec):
    """Rate at which the empty site ``x`` becomes type ``i``."""
    if config[x] != EMPTY:
        raise DomainError(f"site {x} is occupied")
    if i not in (1, 2):
        raise DomainError("type must be 1 or 2")
    total = 0.0
    for y in config.geometry.neighbor_table[x]:
        if config[y] == i:
            total += fitness(config, int(y), matrix, spec)
    return total / config.geometry.degree


def voter_fitness(config, site, matrix, selection):
    val = (1 - selection.w) * 1 + selection.w * payoff(config, site, matrix)
    if val < 0:
        raise DomainError(f"negative fitness {val} at site {site}")
    return val


def voter_game_rate(config, x, j, matrix, selection, mode):
    """Rate at which site ``x`` switches to strategy ``j`` in a voter game.

    ``mode`` is ``"birth_death"`` or ``"death_birth"``.  Under death-birth
    updating a site whose neighbors all have zero fitness is never replaced.
    """
    if np.any(config.states == EMPTY):
        raise DomainError("voter games need a configuration without vacancies")
    num = 0.0
    den = 0.0
    for y in config.geometry.neighbor_table[x]:
        phi = voter_fitness(config, int(y), matrix, selection)
        if config[y] == j:
            num += phi
        den += phi
    if mode == "birth_death":
        return num / config.geometry.degree
    if mode == "death_birth":
        return num / den if den > 0 else 0.0
    raise DomainError(f"unknown updating mode {mode!r}")


def fitness_table(matrix, spec, degree):
    """Birth rate of a type-i player with n1, n2 neighbors of each type.

    Shape (3, degree + 1, degree + 1); row 0 and infeasible cells are 0.
    """
    table = np.zeros((3, degree + 1, degree + 1))
    for i in (1, 2):
        for n1 in range(degree + 1):
            for n2 in range(degree + 1 - n1):
                table[i, n1, n2] = spec(_payoff_from_counts(matrix, i, n1, n2, degree))
    return table


def voter_fitness_table(matrix, selection, degree):
    """Voter-game fitness (1 - w) + w * payoff, same layout as fitness_table.

    Only cells with n1 + n2 = degree are reachable; others are left at 0.
    """
    table = np.zeros((3, degree + 1, degree + 1))
    for i in (1, 2):
        for n1 in range(degree + 1):
            n2 = degree - n1
            table[i, n1, n2] = ((1 - selection.w) * 1
                                + selection.w * _payoff_from_counts(matrix, i, n1, n2, degree))
    return table
