"""Seeded random streams.

All randomness flows through numpy's PCG64 bit generator, whose output for
a given seed is fixed across platforms and numpy releases.
"""

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_seed(seed: int, *tags: int) -> int:
    """Derive an independent sub-seed from ``seed`` and integer tags."""
    ss = np.random.SeedSequence([int(seed), *[int(t) for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
