"""
Thread-pool helpers.

numpy releases the GIL inside its kernels, so threads are enough to spread
per-pixel and per-sample work. Results always come back in input order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from analytic_diffusion.defaults import thread_count

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T],
                max_workers: Optional[int] = None) -> List[R]:
    """Apply ``fn`` to every item, in parallel, keeping the input order."""
    items = list(items)
    workers = min(max_workers or thread_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def split_range(size: int, parts: int) -> List[np.ndarray]:
    """Split ``range(size)`` into at most ``parts`` contiguous index blocks."""
    parts = max(1, min(parts, size))
    return [block for block in np.array_split(np.arange(size), parts) if block.size]
