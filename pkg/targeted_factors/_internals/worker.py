"""Fan-out of independent jobs such as simulation replications and forecast windows."""

import logging
from typing import Callable, Iterable, TypeVar

from joblib import Parallel, delayed

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_parallel(func: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """
    Apply ``func`` to every item, keeping input order.

    Args:
        func: Pure function of one item; it must not share mutable state across calls.
        items: Work items.
        jobs: Number of worker threads. 1 runs in the calling thread; -1 uses every core.

    Returns:
        Results in the order of ``items``.
    """
    items = list(items)
    if jobs == 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug("Dispatching %d jobs to %s workers", len(items), jobs)
    return Parallel(n_jobs=jobs, prefer="threads")(delayed(func)(item) for item in items)
