"""Seedable, counter-based random streams.

All randomness in the package flows through :func:`seeded_rng`, which builds a
Philox (counter-based) generator from a user seed plus a small stream id, so
independent consumers (weight init, epoch shuffling, noise, synthetic data)
never share a stream even when they share a seed, and every draw is
reproducible regardless of threading.
"""

import numpy as np

# Stream ids; keep stable, they are part of the reproducibility contract.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_NOISE = 2
STREAM_SYNTH = 3
STREAM_BENCH = 4
STREAM_GRADCHECK = 5


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """A Philox generator keyed by (seed, stream).

    Seeds are 64-bit signed integers; negatives map two's-complement style
    (SeedSequence itself only accepts non-negative entropy).
    """
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy, spawn_key=(stream,))))
