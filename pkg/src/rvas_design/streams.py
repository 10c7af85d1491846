"""Addressable, reproducible random streams.

A stream is a 64-bit seed plus a path of integers. Substreams are derived by
extending the path, so replicate ``r`` always sees the same draws no matter
how many workers run or in which order.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError

__all__ = ["RandomStream", "as_generator"]

_MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class RandomStream:
    seed: int
    path: tuple = ()

    def __post_init__(self):
        if int(self.seed) != self.seed or not 0 <= self.seed <= _MAX_SEED:
            raise DomainError(f"seed must be an integer in [0, 2**64), got {self.seed}")
        path = tuple(int(p) for p in self.path)
        if any(p < 0 for p in path):
            raise DomainError(f"stream path entries must be >= 0, got {path}")
        object.__setattr__(self, "path", path)

    def child(self, *index):
        return RandomStream(self.seed, self.path + tuple(index))

    def generator(self):
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng):
    """Accept a RandomStream, a numpy Generator, or an int seed."""
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng)).generator()
    raise TypeError(f"expected RandomStream, numpy Generator or int, got {type(rng).__name__}")
