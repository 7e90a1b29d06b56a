"""Order-preserving worker pool for independent seeded tasks."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

WORKERS_ENV = "GAMPCLASS_WORKERS"


def n_workers(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be at least 1")
    return n


def child_seeds(seed, n):
    """Independent integer seeds for ``n`` tasks, stable across worker counts."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in ss.spawn(n)]


def pmap(fn, items, workers=None):
    """``[fn(x) for x in items]``, spread over processes when workers > 1."""
    items = list(items)
    workers = n_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))
