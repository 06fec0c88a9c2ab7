"""Deterministic random-stream derivation.

Every random consumer (weight init, batch order, dropout, augmentation,
segment sampling, data generation) derives its own generator from a root
seed plus string tags. Streams are independent of each other, so adding or
removing one consumer (e.g. a decoder that is absent in some model variant)
never shifts the randomness seen by the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, *tags: str | int) -> np.random.Generator:
    """Return a Generator keyed by ``root_seed`` and a tag path.

    Tags may be strings (hashed with crc32, stable across runs and
    platforms) or plain ints.
    """
    words = [int(root_seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
