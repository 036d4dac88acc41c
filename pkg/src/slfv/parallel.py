"""Replicate fan-out with counter-based seeding.

Replicate ``i`` of stream ``stream`` always receives the generator seeded by
``SeedSequence([seed, stream, i])``, so results do not depend on how work
is scheduled across processes.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np


def replicate_rng(seed: int, stream: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(i)]))


def _run_chunk(fn, seed, stream, indices):
    return [fn(i, replicate_rng(seed, stream, i)) for i in indices]


def map_replicates(fn: Callable[[int, np.random.Generator], object], n: int, seed: int,
                   stream: int = 0, jobs: int = 1) -> list:
    """[fn(i, rng_i) for i in range(n)], optionally over ``jobs`` worker processes."""
    if n <= 0:
        return []
    if jobs <= 1 or n == 1:
        return _run_chunk(fn, seed, stream, range(n))
    chunks = [list(c) for c in np.array_split(np.arange(n), min(jobs * 4, n)) if len(c)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_chunk, fn, seed, stream, [int(i) for i in c]) for c in chunks]
        out = []
        for fut in futures:  # merge in replicate order
            out.extend(fut.result())
    return out
