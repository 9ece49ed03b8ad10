"""Conditional generative modeling of dynamically deforming 3D anatomies
as spatio-temporal neural signed distance fields."""

import zlib

import numpy as np

__version__ = "0.1.0"

NUM_FRAMES = 20
FRAME_PHASES = tuple(round(0.05 * k, 2) for k in range(NUM_FRAMES))


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, purpose...) so every consumer of the
    one pipeline seed gets its own reproducible stream."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for item in path:
        if isinstance(item, str):
            entropy.append(zlib.crc32(item.encode("utf-8")))
        else:
            entropy.append(int(item) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
