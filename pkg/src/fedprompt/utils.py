"""Seeded RNG streams and checksum helpers."""

import hashlib

import numpy as np

# Stream tags keep independent RNG streams from colliding; every consumer
# derives its generator as rng_for(seed, TAG, *indices).
TAG_BACKBONE = 1
TAG_PROMPT_INIT = 2
TAG_SELECT = 3
TAG_BATCH = 4
TAG_LABELS = 5
TAG_PARTITION = 6
TAG_BASELINE_INIT = 7
TAG_CELL = 8
TAG_DROPOUT = 9


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    """Counter-based generator for the stream (seed, *tags).

    Philox is platform-stable, so any (seed, tags) pair reproduces the same
    values on every machine and every run.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, tags)])))


def buffer_checksum(arrays) -> str:
    """SHA-256 over the raw bytes of the given float/int buffers, in order."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
