"""Seeded random streams.

Every stream is a Philox (counter-based, 64-bit) generator keyed by a
``SeedSequence`` built from the seed plus optional integer stream labels, so
independent consumers (data generation, training, Monte Carlo) never share
state and results do not depend on call order between them.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


# stream labels
DATA = 1
SPLIT = 2
TRAIN = 3
INIT = 4
MONTE_CARLO = 5
EVAL_DATA = 6
