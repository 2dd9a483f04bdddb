"""Deterministic seed derivation for parallel Monte Carlo replications.

Replication r of a run with master seed s always uses ``derive_seed(s, r)``,
so results do not depend on execution order, chunking, or worker count.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
# Fixed salt separating auxiliary streams (reference samples, noise) from the
# main replication stream.
AUX_STREAM_SALT = 0x9E3779B97F4A7C15


def derive_seed(master: int, index: int, salt: int = 0) -> int:
    """Seed for replication `index` of a run seeded with `master`."""
    if master < 0 or index < 0:
        raise ValueError("seeds and replication indices must be non-negative")
    return (master ^ index ^ salt) & _MASK64


def rng_for(master: int, index: int = 0, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, index, salt))
