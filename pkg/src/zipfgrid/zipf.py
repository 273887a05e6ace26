"""Discrete power-law (Zipfian) distributions over ranked items.

Ranks are 1-based: rank 1 is the most frequent item. Probabilities follow
``p(rank) = rank**(-exponent) / Z`` with ``Z`` the normalizing sum. Draws use
inverse-CDF lookup on a precomputed cumulative array, so a given random stream
always reproduces the same rank sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from zipfgrid.errors import InvalidArgumentError


@dataclass(frozen=True)
class ZipfDistribution:
    """Immutable normalized power law over ranks ``1..num_items``."""

    num_items: int
    exponent: float
    pmf: np.ndarray
    cdf: np.ndarray = field(repr=False)

    def prob(self, rank: int) -> float:
        """Probability of a 1-based rank."""
        return float(self.pmf[rank - 1])


def build_zipf(num_items: int, exponent: float) -> ZipfDistribution:
    """Construct the normalized distribution ``p(x) = x**(-exponent) / Z``.

    The pmf is computed exactly as ``vals = 1 / arange(1, N+1)**exponent``
    normalized by ``vals.sum()``, in double precision.
    """
    if num_items < 1:
        raise InvalidArgumentError(f"num_items must be >= 1, got {num_items}")
    if not math.isfinite(exponent) or exponent < 0:
        raise InvalidArgumentError(f"exponent must be finite and >= 0, got {exponent}")
    vals = 1.0 / np.arange(1, num_items + 1, dtype=np.float64) ** exponent
    pmf = vals / np.sum(vals)
    cdf = np.cumsum(pmf)
    pmf.setflags(write=False)
    cdf.setflags(write=False)
    return ZipfDistribution(num_items=num_items, exponent=float(exponent), pmf=pmf, cdf=cdf)


def sample(dist: ZipfDistribution, rng: np.random.Generator) -> int:
    """Draw one 1-based rank with probability ``dist.pmf[rank-1]``."""
    u = rng.random()
    rank = int(np.searchsorted(dist.cdf, u, side="right")) + 1
    return min(rank, dist.num_items)  # guards u landing past cdf[-1] rounding


def sample_many(dist: ZipfDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized variant of :func:`sample`; returns ``n`` ranks as int64."""
    u = rng.random(n)
    ranks = np.searchsorted(dist.cdf, u, side="right") + 1
    return np.minimum(ranks, dist.num_items).astype(np.int64)


def sample_without_replacement(
    dist: ZipfDistribution, k: int, rng: np.random.Generator
) -> list[int]:
    """Draw ``k`` distinct ranks, renormalizing over remaining items per draw."""
    if not 1 <= k <= dist.num_items:
        raise InvalidArgumentError(
            f"k must be in [1, {dist.num_items}], got {k}"
        )
    remaining = dist.pmf.copy()
    out: list[int] = []
    for _ in range(k):
        total = remaining.sum()
        u = rng.random() * total
        cum = np.cumsum(remaining)
        idx = int(np.searchsorted(cum, u, side="right"))
        idx = min(idx, dist.num_items - 1)
        while remaining[idx] == 0.0:  # rounding pushed us onto a used slot
            idx += 1
        out.append(idx + 1)
        remaining[idx] = 0.0
    return out


def rare_tail(dist: ZipfDistribution, fraction: float) -> set[int]:
    """Ranks of the least-frequent ``ceil(fraction * N)`` items.

    The small slack below keeps exact products like ``0.2 * 30`` from being
    ceiled to 7 by floating-point noise.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError(f"fraction must be in (0, 1], got {fraction}")
    count = max(1, math.ceil(fraction * dist.num_items - 1e-9))
    return set(range(dist.num_items - count + 1, dist.num_items + 1))
