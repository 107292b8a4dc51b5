"""Small internal helpers: seed derivation and timing."""

import time

import numpy as np


def derived_rng(seed, *key):
    """Independent generator for (seed, key...), stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derived_seed(seed, *key):
    """Collapse (seed, key...) to a fresh unsigned 64-bit seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class Timer:
    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self._t0) * 1000.0
        return False
