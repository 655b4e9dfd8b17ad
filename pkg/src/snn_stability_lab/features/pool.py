"""
Process pool with deterministic result order.
"""

from __future__ import annotations

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Hashable, Iterable, TypeVar

__all__ = ("run_tasks",)

logger = logging.getLogger(__name__)

K = TypeVar("K", bound=Hashable)
R = TypeVar("R")


def run_tasks(
        fn: Callable[..., R],
        keyed_tasks: Iterable[tuple[K, tuple[Any, ...]]],
        jobs: int = 1,
        start_method: str | None = None,
) -> dict[K, R]:
    """Calls ``fn(*args)`` for every ``(key, args)``; returns the results by key, in sorted key order.

    With ``jobs <= 1`` the tasks run in this process. Otherwise `fn` and the
    arguments must be picklable; the first failing task (in key order) raises.
    """
    tasks = sorted(keyed_tasks, key=lambda item: item[0])
    if jobs <= 1 or len(tasks) <= 1:
        return {key: fn(*args) for key, args in tasks}
    context = multiprocessing.get_context(start_method) if start_method else None
    logger.debug("dispatching %d tasks to %d workers", len(tasks), jobs)
    with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as executor:
        futures = [(key, executor.submit(fn, *args)) for key, args in tasks]
        return {key: future.result() for key, future in futures}
