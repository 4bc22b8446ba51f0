"""Ordered parallel map over customers or bootstrap iterations.

Results always come back in input order, so downstream sums do not depend
on the thread count. Each task runs inside a copy of the caller's context,
which keeps the run id of ``clv.logging_utils`` on worker log lines.
"""
from __future__ import annotations

import contextvars

import joblib
import numpy as np

from . import conf


def resolve_threads(threads=None) -> int:
    n = conf.get('threads') if threads is None else threads
    return max(1, int(n))


def chunk_bounds(n: int, parts: int):
    edges = np.linspace(0, n, max(1, min(parts, n)) + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _in_context(ctx, fn):
    def run(*args):
        return ctx.copy().run(fn, *args)
    return run


def map_items(fn, items, threads=None) -> list:
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    task = _in_context(contextvars.copy_context(), fn)
    return joblib.Parallel(n_jobs=threads, backend='threading')(
        joblib.delayed(task)(item) for item in items
    )


def map_chunks(fn, n: int, threads=None) -> list:
    """Apply ``fn(lo, hi)`` over contiguous index ranges of ``range(n)``."""
    threads = resolve_threads(threads)
    bounds = chunk_bounds(n, threads)
    return map_items(lambda b: fn(*b), bounds, threads)


def concat_chunks(fn, n: int, threads=None) -> np.ndarray:
    parts = map_chunks(fn, n, threads)
    if not parts:
        return np.zeros(0)
    return np.concatenate([np.atleast_1d(p) for p in parts])
