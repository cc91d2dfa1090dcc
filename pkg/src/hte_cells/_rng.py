"""Schedule-independent random streams.

Every task draws from a generator derived from ``(root_seed, *key)`` so the
result does not depend on which worker ran it or in what order.
"""
import zlib

import numpy as np


def _key_int(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(root, *key):
    """Stable 32-bit integer seed for the task identified by ``key``."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key_int(k) for k in key))
    return int(ss.generate_state(1)[0])


def derive_rng(root, *key):
    return np.random.default_rng(derive_seed(root, *key))
