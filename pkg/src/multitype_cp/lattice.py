"""Periodic d-dimensional lattices and site configurations.

Sites are indexed in C (row-major) order.  Neighbor ``2k`` of a site is the
step ``-e_k`` and neighbor ``2k + 1`` is ``+e_k``, so reversing direction
``j`` gives direction ``j ^ 1``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

EMPTY, TYPE1, TYPE2 = 0, 1, 2


@dataclass(frozen=True)
class TorusGeometry:
    sides: tuple

    def __post_init__(self):
        sides = tuple(int(s) for s in np.atleast_1d(self.sides))
        if len(sides) < 1:
            raise ValueError("dimension must be at least 1")
        if any(s < 4 for s in sides):
            raise ValueError(f"every side must be at least 4, got {sides}")
        object.__setattr__(self, "sides", sides)

    @classmethod
    def cube(cls, d, side):
        return cls((side,) * d)

    @property
    def d(self):
        return len(self.sides)

    @property
    def degree(self):
        return 2 * self.d

    @property
    def total_sites(self):
        return int(np.prod(self.sides))

    def check_site(self, site):
        if not 0 <= site < self.total_sites:
            raise IndexError(f"site {site} outside 0..{self.total_sites - 1}")

    def coords(self, site):
        self.check_site(site)
        return tuple(int(c) for c in np.unravel_index(site, self.sides))

    def index(self, coords):
        coords = tuple(int(c) % s for c, s in zip(coords, self.sides))
        return int(np.ravel_multi_index(coords, self.sides))

    @cached_property
    def neighbor_table(self):
        """int32 array of shape (total_sites, 2d)."""
        grid = np.arange(self.total_sites).reshape(self.sides)
        cols = []
        for k in range(self.d):
            cols.append(np.roll(grid, 1, axis=k).ravel())   # value at x - e_k
            cols.append(np.roll(grid, -1, axis=k).ravel())  # value at x + e_k
        table = np.stack(cols, axis=1).astype(np.int32)
        table.setflags(write=False)
        return table

    @cached_property
    def ball2_table(self):
        """Sites within graph distance two of each site, int32.

        Rows are padded with repeats on tori small enough for the ball to wrap.
        """
        nbr = self.neighbor_table
        n = self.total_sites
        cand = np.concatenate([np.arange(n)[:, None], nbr, nbr[nbr].reshape(n, -1)], axis=1)
        cand.sort(axis=1)
        dup = np.zeros(cand.shape, dtype=bool)
        dup[:, 1:] = cand[:, 1:] == cand[:, :-1]
        order = np.argsort(dup, axis=1, kind="stable")
        compact = np.take_along_axis(cand, order, axis=1)
        width = int((~dup).sum(axis=1).max())
        table = np.ascontiguousarray(compact[:, :width], dtype=np.int32)
        table.setflags(write=False)
        return table

    def neighbors(self, site):
        self.check_site(site)
        return [int(y) for y in self.neighbor_table[site]]

    def edges(self):
        """Each undirected nearest-neighbor edge once, as an (E, 2) array."""
        nbr = self.neighbor_table
        plus = nbr[:, 1::2]
        tails = np.repeat(np.arange(self.total_sites), self.d)
        return np.stack([tails, plus.ravel()], axis=1)


@dataclass
class Configuration:
    geometry: TorusGeometry
    states: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.geometry.total_sites
        if self.states is None:
            self.states = np.zeros(n, dtype=np.uint8)
        states = np.asarray(self.states)
        if states.shape != (n,):
            states = states.reshape(-1)
        if states.shape != (n,):
            raise ValueError(f"expected {n} states, got {states.size}")
        if states.size and (states.min() < 0 or states.max() > 2):
            raise ValueError("site states must be 0, 1 or 2")
        self.states = np.ascontiguousarray(states, dtype=np.uint8)

    @classmethod
    def empty(cls, geometry):
        return cls(geometry)

    @classmethod
    def full(cls, geometry, kind=TYPE1):
        return cls(geometry, np.full(geometry.total_sites, kind, dtype=np.uint8))

    @classmethod
    def product(cls, geometry, rng, p_occupied=0.5, p_type1=0.5):
        """Independent sites: occupied w.p. ``p_occupied``, then type 1 w.p. ``p_type1``."""
        n = geometry.total_sites
        occupied = rng.random(n) < p_occupied
        ones = rng.random(n) < p_type1
        states = np.where(occupied, np.where(ones, TYPE1, TYPE2), EMPTY)
        return cls(geometry, states.astype(np.uint8))

    def copy(self):
        return Configuration(self.geometry, self.states.copy())

    def __getitem__(self, site):
        return int(self.states[site])

    def __eq__(self, other):
        return (isinstance(other, Configuration) and self.geometry == other.geometry
                and np.array_equal(self.states, other.states))

    def count(self, kind):
        return int(np.count_nonzero(self.states == kind))

    def sites_of(self, kind):
        return set(np.flatnonzero(self.states == kind).tolist())

    def relabeled(self):
        """Swap types 1 and 2."""
        s = self.states
        return Configuration(self.geometry, np.where(s == 0, 0, 3 - s).astype(np.uint8))

    def neighbor_counts(self, site):
        """(n0, n1, n2) among the 2d neighbors of ``site``."""
        nb = self.states[self.geometry.neighbor_table[site]]
        return tuple(int(np.count_nonzero(nb == k)) for k in range(3))

    def as_grid(self):
        return self.states.reshape(self.geometry.sides)


def neighbors(geometry, site):
    return geometry.neighbors(site)


def local_fractions(config, site):
    """Fractions (f0, f1, f2) of the neighbors of ``site`` in each state."""
    config.geometry.check_site(site)
    k = config.geometry.degree
    return tuple(n / k for n in config.neighbor_counts(site))
