"""Thread fan-out with deterministic, index-ordered merge."""

import contextvars
import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "PHASEFORGE_THREADS"


def max_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def map_ordered(fn, items):
    """``[fn(x) for x in items]``, possibly on worker threads.

    Each task runs in a copy of the caller's context so label guards stay
    active inside workers. Results come back in input order.
    """
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(contextvars.copy_context().run, fn, x) for x in items]
        return [f.result() for f in futures]
