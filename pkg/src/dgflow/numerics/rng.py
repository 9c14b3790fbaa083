"""Seeded random streams.

All randomness in the package flows through :func:`rng`, which wraps numpy's
Philox-4x64 counter-based bit generator (10 rounds, the Random123 reference
constants). Given the same integer seed the stream is identical on every
platform numpy supports.
"""

import numpy as np

DEFAULT_SEED = 20240917


def rng(seed=DEFAULT_SEED):
    """Return a ``numpy.random.Generator`` backed by Philox for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn(gen, n):
    """Derive ``n`` independent child generators from ``gen``."""
    return [np.random.Generator(np.random.Philox(int(s)))
            for s in gen.integers(0, 2**63 - 1, size=n)]
