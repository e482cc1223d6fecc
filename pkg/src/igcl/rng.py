"""Seeded random streams.

All randomness goes through :class:`numpy.random.Generator` instances backed by
Philox4x32-10, a counter-based bit generator whose output depends only on the
seed and the counter, never on the platform. Independent sub-streams are
derived with :class:`numpy.random.SeedSequence` spawning.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "spawn"]


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed``."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(seed))


def spawn(seed: int, names: list[str]) -> dict[str, np.random.Generator]:
    """Derive one independent, named stream per entry of ``names`` from ``seed``."""
    children = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(len(names))
    return {name: make_rng(child) for name, child in zip(names, children)}
