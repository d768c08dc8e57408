"""Counter-based random streams keyed by position in the experiment.

A stream is identified by its spawn key, e.g. ``(k,)`` for the data of
replicate ``k`` and ``(k, e, m)`` for imputation ``m`` of engine ``e``.
Streams use the Philox counter-based generator so results do not depend
on which worker consumes them or in which order.
"""

import numpy as np


def seed_sequence(seed, key=()):
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def generator(ss):
    return np.random.Generator(np.random.Philox(ss))


def child(ss, *key):
    """Deterministic child of ``ss`` at relative position ``key``."""
    return np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + tuple(int(k) for k in key))


def as_seed_sequence(rng):
    """Coerce an int, ``SeedSequence`` or ``Generator`` to a ``SeedSequence``."""
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        ss = rng.bit_generator.seed_seq
        if isinstance(ss, np.random.SeedSequence):
            # advance so repeated calls with the same generator differ
            return ss.spawn(1)[0]
        return np.random.SeedSequence(rng.integers(0, 2**63))
    return np.random.SeedSequence(rng)


def streams(rng, n):
    """``n`` independent generators derived from ``rng``."""
    ss = as_seed_sequence(rng)
    return [generator(child(ss, m)) for m in range(n)]
