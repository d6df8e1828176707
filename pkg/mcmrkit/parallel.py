from concurrent.futures import ThreadPoolExecutor
from typing import (
    Callable,
    TypeVar,
)

from .utils import threads

T = TypeVar("T")


def map_frames(
    fn: Callable[[int], T],
    count: int,
) -> list[T]:
    """
    Evaluate ``fn(0), ..., fn(count - 1)`` on the frame worker pool.

    Frames are independent; results come back in frame order whatever the
    scheduling, so downstream reductions stay deterministic.
    The pool size is capped by ``MCMR_THREADS``.

    :param fn: Per-frame job.
    :param count: Number of frames.
    """
    workers = min(threads(), count)
    if workers <= 1:
        return [fn(n) for n in range(count)]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mcmr") as pool:
        return list(pool.map(fn, range(count)))
