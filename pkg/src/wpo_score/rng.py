"""Seeded random streams.

All randomness comes from numpy's Philox-4x64 generator, a 64-bit
counter-based bit generator. A stream is keyed by ``(seed, purpose, *index)``
so that data generation, center selection, parameter init, minibatching and
sampling never share draws, and adding a consumer never shifts another one.

Streams are reproducible across runs and platforms for a given numpy version.
They are not meant to match bit-for-bit any other language's generator; only
the stream structure (one independent stream per purpose) is portable.
"""

import numpy as np

PURPOSES = {
    "data": 1,
    "split": 2,
    "centers": 3,
    "init": 4,
    "batches": 5,
    "sampling": 6,
    "metrics": 7,
    "dsm": 8,
    "orthogonal": 9,
    "check": 10,
}


def stream(seed, purpose, *index):
    """Return an independent ``numpy.random.Generator`` for one purpose."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown RNG purpose {purpose!r}")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, PURPOSES[purpose], *(int(i) for i in index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def as_generator(rng, purpose="sampling"):
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(rng, purpose)
