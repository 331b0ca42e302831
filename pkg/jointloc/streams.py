"""Counter-based random substreams.

Every random draw in a run comes from a generator derived from
(seed, time step, purpose), so the order in which runs, modes or workers
execute cannot change what any of them sees.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class Purpose(IntEnum):
    TRUTH = 0
    PRIOR = 1
    FRAME = 2
    TRACK_JLT = 3
    TRACK_SLT = 4


def substream(seed: int, t: int, purpose: Purpose) -> np.random.Generator:
    """Independent generator for one (seed, t, purpose) triple."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(t), int(purpose)))
    return np.random.default_rng(ss)
