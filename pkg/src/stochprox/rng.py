"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
(seed, stream id) with an explicit 4-word counter, so any draw is a pure
function of (seed, stream, counter) and results never depend on thread
scheduling or evaluation order.
"""

from __future__ import annotations

import numpy as np

# stream ids; fixed forever for reproducibility
COVARIATES = 1
TRUE_PARAMS = 2
LATENTS = 3
NOISE = 4
ENGINE_DRAWS = 5
MCMC_SWEEP = 6
EBIC_PARTICLES = 7
GENERIC = 8

_MASK64 = (1 << 64) - 1


def substream(seed: int, stream: int, *counter: int) -> np.random.Generator:
    """Generator for the given (seed, stream) at an explicit counter position."""
    if len(counter) > 4:
        raise ValueError("counter accepts at most 4 words")
    ctr = [int(c) & _MASK64 for c in counter] + [0] * (4 - len(counter))
    key = [int(seed) & _MASK64, int(stream) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=ctr))
