"""Reproducible random streams.

Every stochastic stage draws from a Philox (counter-based) generator keyed by
the master seed plus a path of integers naming the stage, trajectory or
segment. Two stages never share a stream, and the numbers a stage sees do not
depend on how many other stages ran before it or on which worker ran it.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]

MASK64 = (1 << 64) - 1


def _split(seed: Seed) -> tuple[int, tuple[int, ...]]:
    if isinstance(seed, (int, np.integer)):
        return int(seed) & MASK64, ()
    seed = tuple(int(s) for s in seed)
    if not seed:
        raise ValueError("empty seed")
    return seed[0] & MASK64, tuple(s & MASK64 for s in seed[1:])


def generator(seed: Seed, *path: int) -> np.random.Generator:
    """Philox generator for ``seed`` extended by ``path``.

    The path goes into the spawn key rather than the entropy pool, so paths
    differing only by trailing zeros still give distinct streams.
    """
    master, base = _split(seed)
    ss = np.random.SeedSequence(master, spawn_key=base + tuple(int(p) & MASK64 for p in path))
    return np.random.Generator(np.random.Philox(ss))


def child(seed: Seed, *path: int) -> tuple[int, ...]:
    """Seed tuple naming a sub-stream; pass it anywhere a seed is accepted."""
    master, base = _split(seed)
    return (master,) + base + tuple(int(p) & MASK64 for p in path)
