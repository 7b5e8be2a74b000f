"""Named random streams derived from one experiment seed.

Every stochastic decision in the engine draws from its own generator, keyed
by (seed, stream tag, *context ints). Streams never share state, so adding
draws to one purpose (say, Fisher estimation) cannot shift the batches or
client selections of another. This is what makes strategy variants with
identical update rules produce bit-identical trajectories.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 1
STREAM_SELECT = 2
STREAM_TRAIN = 3
STREAM_FISHER = 4
STREAM_MEMORY = 5
STREAM_DATA = 6
STREAM_PARTITION = 7
STREAM_SCHEDULE = 8
STREAM_RESOURCES = 9


def stream_rng(seed: int, stream: int, *context: int) -> np.random.Generator:
    """Fresh generator for (seed, stream, context); identical keys, identical draws."""
    return np.random.default_rng([int(seed), int(stream), *(int(c) for c in context)])
