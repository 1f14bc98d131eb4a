"""Named random substreams derived from a single run seed.

Every source of randomness in a run (data generation, weight init, input
noise, latent sampling, batch shuffling) draws from its own substream, so
changing how one stream is consumed never perturbs the others.
"""

from __future__ import annotations

import numpy as np

# Fixed registry: stream identity must never depend on insertion order.
_STREAM_IDS = {
    "data": 0,
    "init": 1,
    "noise": 2,
    "epsilon": 3,
    "batch": 4,
    "val_epsilon": 5,
}


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the deterministic generator for a named stream of this seed.

    Extra indices address independent child streams, e.g. one per generated
    cycle, without the streams ever overlapping.
    """
    try:
        key = _STREAM_IDS[name]
    except KeyError:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(_STREAM_IDS)}")
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(key, *indices)))
