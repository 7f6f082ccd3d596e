"""Deterministic map over independent jobs, optionally in worker processes."""

import os
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

_IN_WORKER = False


def _init_worker():
    global _IN_WORKER
    _IN_WORKER = True
    # BLAS threading must not vary with the worker count.
    threadpool_limits(1)


def default_workers():
    env = os.environ.get("NMFRANK_THREADS")
    return int(env) if env else 1


def pmap(func, items, workers=None):
    """``list(map(func, items))``, in submission order whatever ``workers`` is.

    Nested calls from inside a worker always run serially.
    """
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1 or _IN_WORKER:
        with threadpool_limits(1):
            return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
        return list(pool.map(func, items))
