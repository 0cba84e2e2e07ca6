"""Seed mixing and Laplace sampling.

Every random draw in the toolkit goes through a generator derived from a
base seed and a tuple of integer keys, so results do not depend on the
order in which trials, nodes or steps are visited.
"""

from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Mix a base seed with integer keys into a new 64-bit seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]))


def sample_laplace(rng: np.random.Generator, scale: float, size: int | tuple[int, ...]) -> np.ndarray:
    """Zero-mean Laplace draws with the given scale, by inverse CDF.

    The variance of each draw is 2 * scale**2.
    """
    u = rng.uniform(-0.5, 0.5, size)
    # |u| < 0.5 almost surely
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
