"""Ordered chunked parallel map for per-query work."""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def default_jobs():
    try:
        return max(1, int(os.environ.get("NORMCRAFT_JOBS", "1")))
    except ValueError:
        return 1


def map_chunks(fn, items, jobs=None, chunk=1024):
    """Apply ``fn`` to consecutive chunks of ``items`` and concatenate the results in input order."""
    items = np.asarray(items)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    parts = [items[i : i + chunk] for i in range(0, len(items), chunk)] or [items[:0]]
    if jobs == 1 or len(parts) == 1:
        results = [fn(p) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, parts))
    return np.concatenate(results, axis=0)
