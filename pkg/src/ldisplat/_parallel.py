import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "LDISPLAT_NUM_THREADS"


def num_threads(requested=None) -> int:
    if requested is not None:
        return max(1, int(requested))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer") from None


def ordered_map(fn, items, threads=None) -> list:
    """``[fn(x) for x in items]``, optionally threaded; results keep input order.

    Callers reduce the returned list sequentially, so sums do not depend on
    the thread count.
    """
    items = list(items)
    n = num_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
