###############################################################################
# Reusable worker pool for independent, order-preserving evaluations
#
# Thin layer over loky's reusable executor. Every parallel call site in
# mvgeom (depth candidates, row bands, target poses) goes through
# ordered_map so results never depend on the number of workers.
#

import os
import inspect
import threading
import multiprocessing as mp
from functools import partial

import loky
from loky import get_reusable_executor, wrap_non_picklable_objects

__all__ = ["effective_n_jobs", "get_executor", "ordered_map"]

# Idle workers shut down after this many seconds.
_DEFAULT_WORKER_TIMEOUT = 300

_executor_lock = threading.RLock()


def _max_workers_from_env():
    value = os.environ.get("MVGEOM_MAX_WORKERS")
    if value is None:
        return None
    try:
        max_workers = int(value)
    except ValueError:
        raise ValueError("MVGEOM_MAX_WORKERS should be an integer, got {!r}"
                         .format(value))
    return max(max_workers, 1)


def effective_n_jobs(n_jobs=1):
    """Return the number of workers that ``n_jobs`` stands for.

    ``None`` and ``1`` mean in-process evaluation. Negative values count
    back from the number of usable CPUs as given by :func:`loky.cpu_count`
    (``-1`` uses all of them). The result is capped by the
    ``MVGEOM_MAX_WORKERS`` environment variable when it is set.
    """
    if n_jobs is None:
        return 1
    if n_jobs == 0:
        raise ValueError("n_jobs == 0 has no meaning, use None or 1 for "
                         "sequential evaluation.")
    if n_jobs < 0:
        n_jobs = max(loky.cpu_count() + 1 + n_jobs, 1)
    max_workers = _max_workers_from_env()
    if max_workers is not None:
        n_jobs = min(n_jobs, max_workers)
    return n_jobs


def get_executor(n_jobs):
    """Return loky's reusable executor resized to ``n_jobs`` workers."""
    max_workers = effective_n_jobs(n_jobs)
    timeout = float(os.environ.get("MVGEOM_WORKER_TIMEOUT",
                                   _DEFAULT_WORKER_TIMEOUT))
    with _executor_lock:
        mp.util.debug("Requesting reusable executor with max_workers={}."
                      .format(max_workers))
        return get_reusable_executor(max_workers=max_workers,
                                     timeout=timeout)


def _needs_wrapping(fn):
    # Same rule as loky's _wrap_objects_when_needed: functions from __main__,
    # nested functions and lambdas cannot be pickled by reference.
    if isinstance(fn, partial):
        return _needs_wrapping(fn.func)
    need_wrap = "__main__" in getattr(fn, "__module__", "")
    func_code = getattr(fn, "__code__", None)
    if func_code is not None:
        need_wrap |= bool(func_code.co_flags & inspect.CO_NESTED)
    need_wrap |= "<lambda>" in getattr(fn, "__name__", "")
    return need_wrap


def ordered_map(fn, items, n_jobs=1):
    """Evaluate ``fn`` on every item and return the results in input order.

    Args:
        fn: callable taking a single item. It must be picklable when
            ``n_jobs`` is not 1; lambdas and nested functions are routed
            through cloudpickle.
        items: iterable of arguments.
        n_jobs: number of worker processes, see :func:`effective_n_jobs`.

    Returns:
        list of ``fn(item)`` for every item, in the order of ``items``.
    """
    items = list(items)
    n_workers = effective_n_jobs(n_jobs)
    if n_workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    if _needs_wrapping(fn):
        fn = wrap_non_picklable_objects(fn)
    executor = get_executor(min(n_workers, len(items)))
    futures = [executor.submit(fn, item) for item in items]
    mp.util.debug("Submitted {} tasks to {} workers"
                  .format(len(futures), n_workers))
    return [f.result() for f in futures]
