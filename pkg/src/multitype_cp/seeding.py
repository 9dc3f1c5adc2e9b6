"""Deterministic random streams.

Every stochastic object in the package draws from a Philox (counter-based,
64-bit) generator built from ``SeedSequence(entropy=master_seed,
spawn_key=key)``.  The key is a tuple of small integers naming the stream:
a purpose tag from the table below followed by indices such as
``(cell, replicate)`` or a time-slab number.  Two streams with different keys
are statistically independent, and a stream depends on nothing but
``(master_seed, key)``, so results do not depend on execution order.
"""

import numpy as np

MASK64 = (1 << 64) - 1

# purpose tags (first element of every spawn key)
GRAPHICAL_SLAB = 1
ZETA_SLAB = 2
SIMPLIFIED_1D = 3
REPLICATE = 4
INITIAL = 5
DIRECT = 6
WINDOWS = 7
BLOCK = 8


def seed_sequence(seed, *key):
    return np.random.SeedSequence(entropy=int(seed) & MASK64,
                                  spawn_key=tuple(int(k) for k in key))


def rng_for(seed, *key):
    """Philox generator for ``(seed, key)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))


def derived_seed(seed, *key):
    """A 64-bit integer seed derived from ``(seed, key)``."""
    return int(seed_sequence(seed, *key).generate_state(1, np.uint64)[0])
