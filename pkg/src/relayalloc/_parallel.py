"""Deterministic chunked evaluation of block ranges.

Blocks are processed in fixed-size chunks and the per-chunk partial sums are
combined in chunk order with exact (fsum) accumulation, so results do not
depend on the number of workers. RELAY_ALLOC_THREADS caps the thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_BLOCKS = 16384


def worker_count() -> int:
    raw = os.environ.get("RELAY_ALLOC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def chunked_partials(n: int, fn, threads: int | None = None, chunk: int = CHUNK_BLOCKS) -> list:
    """Evaluate fn(i0, i1) over [0, n) in fixed chunks; results in chunk order."""
    spans = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if threads is None:
        threads = worker_count()
    if threads <= 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda span: fn(*span), spans))


def fsum_field(partials: list, idx: int):
    """Exact sum of one field across chunk partials (scalar or 1-D array)."""
    first = partials[0][idx]
    if np.ndim(first) == 0:
        return math.fsum(float(p[idx]) for p in partials)
    cols = np.asarray([p[idx] for p in partials], dtype=float)
    return np.array([math.fsum(cols[:, j]) for j in range(cols.shape[1])])
