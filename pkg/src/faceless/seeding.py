import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_rng(seed, *parts):
    """Generator keyed by a base seed plus any number of labels.

    Stable across processes (no use of ``hash``), so results are reproducible.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(p) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed, *parts):
    return int(derive_rng(seed, *parts).integers(0, 2**63 - 1))
