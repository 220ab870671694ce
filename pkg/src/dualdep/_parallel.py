"""Process-based fan-out for independent replicate tasks.

Every task derives its random stream from its own index, so results are
identical whatever the worker count or completion order; ``map`` returns
them in submission order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def run_indexed(worker, tasks, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    chunksize = max(1, len(tasks) // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks, chunksize=chunksize))
