"""Deterministic random number streams.

Every stochastic operation in the package draws from a counter-based
generator (Philox) keyed by a master seed plus a tuple of purpose tags.
Streams for distinct tag tuples are statistically independent, and the
stream for a given (seed, tags) pair never depends on evaluation order,
which is what makes replicate generation reproducible under any degree
of parallelism.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _entropy(part) -> int:
    """Map a tag (int or str) to a nonnegative integer for SeedSequence."""
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"rng tag must be int or str, got {type(part).__name__}")


def substream(seed: int, *tags) -> np.random.Generator:
    """Return an independent Generator for (seed, *tags).

    The same arguments always yield an identical stream; distinct tag
    tuples yield independent streams.
    """
    entropy = [_entropy(seed)] + [_entropy(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def fresh_seed() -> int:
    """Entropy-derived master seed, used when the caller supplies none."""
    return int(np.random.SeedSequence().entropy & _MASK64)
