"""Named, reproducible random substreams derived from a single root seed."""
import zlib

import numpy as np


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


def substream(seed, name, *indices):
    """Return a Generator for the substream ``name`` (optionally indexed) of ``seed``.

    Substreams with different names or indices are statistically independent and
    do not depend on the order in which they are requested.
    """
    key = (_name_key(name),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng):
    """Coerce ``None``, an int seed or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def child_seed(rng):
    """Draw a fresh integer seed from ``rng`` for deriving further substreams."""
    return int(rng.integers(0, 2**63 - 1))
