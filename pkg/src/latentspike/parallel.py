"""Deterministic worker pool for Jacobi-style sweeps.

Work is split on a fixed chunk grid that depends only on the problem size,
never on the worker count. Chunk bodies are elementwise array operations with
a fixed per-element operation order, and workers write disjoint output slices,
so results are bitwise identical for any number of workers. Reductions
(objective values, residuals) are done by the caller on full arrays in a
single deterministic pass.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 8192


def resolve_threads(threads: int) -> int:
    if threads == 0:
        return max(1, os.cpu_count() or 1)
    return max(1, threads)


class WorkerPool:
    """Thread pool running fixed-grid chunked loops; inline when single-threaded."""

    def __init__(self, threads: int = 1):
        self.threads = resolve_threads(threads)
        self._pool = ThreadPoolExecutor(max_workers=self.threads) if self.threads > 1 else None

    def run_spans(self, fn, n: int):
        """Call fn(lo, hi) over [0, n) split on the fixed chunk grid."""
        spans = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
        if self._pool is None or len(spans) == 1:
            for lo, hi in spans:
                fn(lo, hi)
        else:
            list(self._pool.map(lambda span: fn(*span), spans))

    def run_items(self, fn, items):
        """Call fn(item) for each item (one task per item, e.g. per neuron)."""
        items = list(items)
        if self._pool is None or len(items) == 1:
            for it in items:
                fn(it)
        else:
            list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
