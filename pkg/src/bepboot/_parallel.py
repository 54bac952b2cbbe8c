"""Process pool plumbing shared by the estimators and the simulation harness."""

from __future__ import annotations

import atexit
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

_pools: dict[int, ProcessPoolExecutor] = {}


def resolve_workers(workers: int) -> int:
    """``0`` means all available cores."""
    if workers < 0:
        raise ValueError("workers must be >= 0")
    if workers == 0:
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:  # pragma: no cover - non-Linux
            return os.cpu_count() or 1
    return workers


def _pool(workers: int) -> ProcessPoolExecutor:
    pool = _pools.get(workers)
    if pool is None:
        pool = _pools[workers] = ProcessPoolExecutor(max_workers=workers)
    return pool


@atexit.register
def shutdown_pools() -> None:
    for pool in _pools.values():
        pool.shutdown(wait=False, cancel_futures=True)
    _pools.clear()


def run_tasks(fn: Callable[..., T], tasks: Sequence[tuple], workers: int) -> list[T]:
    """Apply ``fn(*task)`` to every task, preserving order."""
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) <= 1:
        return [fn(*task) for task in tasks]
    pool = _pool(workers)
    futures = [pool.submit(fn, *task) for task in tasks]
    return [f.result() for f in futures]
