"""Seeded random-number streams.

All simulators draw from a Philox counter-based generator.  Independent
streams are derived from a 64-bit root seed plus an integer stream key,
so Monte Carlo replicates can run in any order (or in parallel) without
changing the numbers any single replicate sees.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "child_seed", "draw_index"]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under the given root seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def child_seed(seed: int, *key: int) -> int:
    """Derive a 64-bit child seed, stable under reordering of sibling draws."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, dtype=np.uint64)[0])


def draw_index(rng: np.random.Generator, cdf: np.ndarray) -> int:
    """Draw an index from a discrete distribution given its cumulative sums.

    Uses a single uniform and a binary search so the draw is reproducible
    across platforms and numpy versions.
    """
    # min() guards against cumulative rounding leaving cdf[-1] slightly below 1
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
