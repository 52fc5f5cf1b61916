"""Thread pool helper; results come back in input order."""

from concurrent.futures import ThreadPoolExecutor
import os


def default_jobs():
    return os.cpu_count() or 1


def ordered_map(fn, items, jobs=1):
    items = list(items)
    if jobs is None:
        jobs = default_jobs()
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
