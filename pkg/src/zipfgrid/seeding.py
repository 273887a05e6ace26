"""Seed-stream plumbing.

Every random decision in the package draws from a Philox counter-based
generator keyed by an explicit tuple, e.g. ``stream(seed, "train-env")``.
There is no global random state, and two streams with different key tuples
are statistically independent, so actors / evaluators / initializers can be
reseeded and reordered without perturbing each other.
"""

from __future__ import annotations

import numpy as np

# Fixed purpose tags; hashing strings through SeedSequence keeps key tuples
# stable across runs and platforms.
_TAGS = {
    "world": 0x5A1F0001,
    "net-init": 0x5A1F0002,
    "train-env": 0x5A1F0003,
    "agent": 0x5A1F0004,
    "replay": 0x5A1F0005,
    "eval": 0x5A1F0006,
}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, purpose tag, *extra)``."""
    tag = _TAGS.get(purpose)
    if tag is None:
        raise KeyError(f"unknown stream purpose {purpose!r}; known: {sorted(_TAGS)}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag, *map(int, extra)])
    return np.random.Generator(np.random.Philox(seed=ss))
