"""Named random substreams derived from a single root seed."""
import zlib

import numpy as np


def _key(name):
    return zlib.crc32(name.encode("utf-8"))


def substream(seed, *names):
    """Return a numpy Generator keyed by ``seed`` and a path of names.

    The same (seed, names) pair always yields the same stream, and distinct
    names give statistically independent streams.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(str(n)) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def subseed(seed, *names):
    """Integer seed (63-bit) for libraries that want a plain int."""
    return int(substream(seed, *names).integers(0, 2**63 - 1))
