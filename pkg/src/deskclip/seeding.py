"""Counter-based random streams.

Every stochastic decision in the package draws from a generator derived
from (master seed, purpose tag, counters). Streams are independent of
each other and reconstructible from the counters alone, which is what
makes checkpoint resume bit-exact without serializing generator state.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def rng_for(seed: int, *tags) -> np.random.Generator:
    """A generator unique to (seed, tags); same inputs, same stream."""
    key = tuple(_tag_to_int(t) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))
