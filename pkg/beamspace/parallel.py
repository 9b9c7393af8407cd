"""Sample-parallel helper shared by dataset generation, solves and sweeps."""

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads: int = 1):
    """
    Apply fn to every item and return the results in input order.

    Results are collected by position, so the outcome does not depend on the
    thread count or on completion order.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
