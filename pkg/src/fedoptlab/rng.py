"""Deterministic, label-addressed random streams.

Every source of randomness in the library is a counter-based stream
identified by a 64-bit seed and a label tuple (typically purpose string,
round index, client index).  Equal (seed, label) pairs always produce
identical draw sequences, independent of creation order or scheduling,
which is what makes whole experiment runs reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """A reproducible randomness source addressed by (seed, label)."""

    seed: int
    label: tuple = ()

    def derive(self, *parts) -> "RandomStream":
        """Child stream with the label extended by ``parts`` (ints/strings)."""
        return RandomStream(self.seed, self.label + tuple(parts))

    def generator(self) -> np.random.Generator:
        # repr of a tuple of ints/strings is stable across processes, so the
        # hash (and hence the stream) does not depend on PYTHONHASHSEED.
        digest = hashlib.blake2b(
            repr((self.seed & _MASK64, self.label)).encode(), digest_size=32
        ).digest()
        entropy = int.from_bytes(digest, "little")
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomStream or a ready Generator; return a Generator."""
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng)!r}")
