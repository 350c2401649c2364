"""
Ordered fan-out over a thread pool capped by OSMEE_THREADS
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from .settings import get_thread_count

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply func to every item and return the results in input order

    Args:
        func: Pure function of one item (must not share a random generator across items)
        items: Work items
        threads: Worker cap; None reads OSMEE_THREADS, 1 runs inline

    Returns:
        List of results, same order as items, independent of the thread count
    """
    items = list(items)
    if threads is None:
        threads = get_thread_count()
    threads = max(1, min(threads, len(items) or 1))
    if threads == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, items))
