"""
Worker pool with index-addressed gather.

Tasks are independent; each result is written into the slot of its task so
the output never depends on completion order or on the number of workers.
"""

import logging
import multiprocessing
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

# Read-only state installed once per worker process
_SHARED: Dict[str, Any] = {}


def install_shared(**values: Any) -> None:
    """Pool initializer: make ``values`` available to tasks in this process."""
    _SHARED.update(values)


def shared(name: str) -> Any:
    return _SHARED[name]


def _indexed_call(job: Tuple[Callable[[Any], Any], int, Any]) -> Tuple[int, Any]:
    func, index, task = job
    return index, func(task)


def run_indexed(func: Callable[[Any], Any], tasks: Sequence[Any], workers: int = 1,
                initializer: Optional[Callable[..., None]] = None,
                initargs: Tuple = (), initkwargs: Optional[Dict[str, Any]] = None,
                label: str = "tasks") -> List[Any]:
    """
    Apply ``func`` to every task and return results in task order.

    Args:
        func: Module-level callable (must be picklable for workers > 1)
        tasks: Task payloads
        workers: Number of processes; 1 runs inline
        initializer: Called once per process before any task
        initargs: Positional arguments for the initializer
        initkwargs: Keyword arguments for the initializer
        label: Name used in progress logs

    Returns:
        List with ``func(tasks[i])`` at position i
    """
    initkwargs = initkwargs or {}
    results: List[Any] = [None] * len(tasks)
    if not tasks:
        return results
    step = max(len(tasks) // 10, 1)

    if workers <= 1:
        if initializer is not None:
            initializer(*initargs, **initkwargs)
        for i, task in enumerate(tasks):
            results[i] = func(task)
            if (i + 1) % step == 0:
                logger.debug("%s: %d/%d done", label, i + 1, len(tasks))
        return results

    jobs = [(func, i, task) for i, task in enumerate(tasks)]
    chunksize = max(len(jobs) // (workers * 4), 1)
    logger.info("%s: %d tasks on %d workers", label, len(jobs), workers)
    with multiprocessing.Pool(workers, _init_worker, (initializer, initargs, initkwargs)) as pool:
        for done, (i, value) in enumerate(pool.imap_unordered(_indexed_call, jobs, chunksize), start=1):
            results[i] = value
            if done % step == 0:
                logger.debug("%s: %d/%d done", label, done, len(jobs))
    return results


def _init_worker(initializer, initargs, initkwargs) -> None:
    if initializer is not None:
        initializer(*initargs, **initkwargs)
