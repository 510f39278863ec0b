from __future__ import annotations

import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, TypeVar

T = TypeVar("T")


def timed(fn: Callable[..., T], *args: Any) -> tuple[T, float]:
    started = time.perf_counter()
    result = fn(*args)
    return result, time.perf_counter() - started


class WorkerPool:
    """Thread pool of fixed width that runs UDF applications off the event loop."""

    def __init__(self, width: int) -> None:
        if width < 1:
            raise ValueError("worker pool width must be at least 1")
        self.width = width
        self._executor = ThreadPoolExecutor(max_workers=width, thread_name_prefix="contract-slide")

    async def run(self, fn: Callable[..., T], *args: Any) -> tuple[T, float]:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._executor, timed, fn, *args)

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> WorkerPool:
        return self

    def __exit__(self, *_exc: object) -> None:
        self.close()


async def run_task(pool: WorkerPool | None, fn: Callable[..., T], *args: Any) -> tuple[T, float]:
    if pool is None:
        return timed(fn, *args)
    return await pool.run(fn, *args)
