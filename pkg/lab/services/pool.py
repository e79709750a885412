# lab/services/pool.py
"""
Fan-out of per-path work in fixed chunks.

Chunk boundaries depend only on the chunk size, never on the worker count, and
results come back in chunk order, so any schedule reduces to the same arrays.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def chunk_bounds(n_paths: int, chunk: int) -> List[tuple]:
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if chunk < 1:
        raise ValueError(f"chunk must be >= 1, got {chunk}")
    return [(start, min(chunk, n_paths - start)) for start in range(0, n_paths, chunk)]


def run_chunks(func: Callable, n_paths: int, args: Sequence[Any] = (), workers: int = 1, chunk: int = 200) -> list:
    """
    func(start, count, *args) for every chunk; a list of results in order.
    func must be a module-level function when workers > 1.
    """
    bounds = chunk_bounds(n_paths, chunk)
    if workers <= 1 or len(bounds) == 1:
        return [func(start, count, *args) for start, count in bounds]
    logger.debug("dispatching %d chunks to %d workers", len(bounds), workers)
    with ProcessPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
        futures = [pool.submit(func, start, count, *args) for start, count in bounds]
        return [f.result() for f in futures]


def gather(func: Callable, n_paths: int, args: Sequence[Any] = (), workers: int = 1, chunk: int = 200) -> tuple:
    """run_chunks for workers returning a tuple of arrays; concatenates along axis 0."""
    parts = run_chunks(func, n_paths, args, workers, chunk)
    return tuple(np.concatenate([p[i] for p in parts], axis=0) for i in range(len(parts[0])))
