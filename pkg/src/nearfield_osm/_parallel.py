"""Chunked evaluation with an optional thread pool.

Chunk boundaries depend only on ``chunk``, never on the thread count, so the
assembled result is identical however the chunks are scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "NEARFIELD_OSM_THREADS"


def resolve_threads(threads: int | None) -> int:
    """0 means auto; None falls back to the environment variable, then 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        threads = int(env) if env else 1
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def map_chunks(fn, n: int, chunk: int, threads: int | None = 1, axis: int = -1):
    """Apply ``fn(slice)`` over ``range(n)`` in chunks; concatenate along ``axis``."""
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    workers = resolve_threads(threads)
    if workers == 1 or len(slices) == 1:
        parts = [fn(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, slices))
    return np.concatenate(parts, axis=axis)
