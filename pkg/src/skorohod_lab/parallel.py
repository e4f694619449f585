"""Order-preserving parallel map used by the experiments."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar, Union

T = TypeVar("T")
U = TypeVar("U")

PMap = Callable[[Callable[[T], U], Sequence[T]], list]


def serial_map(fn: Callable[[T], U], items: Iterable[T]) -> list[U]:
    return [fn(x) for x in items]


def resolve_workers(workers: Union[int, str, None]) -> int:
    """``None`` reads ``SKOROHOD_LAB_WORKERS``; ``"auto"`` means the CPU count."""
    if workers is None:
        workers = os.environ.get("SKOROHOD_LAB_WORKERS", "1")
    if isinstance(workers, str):
        if workers.strip().lower() == "auto":
            return max(1, os.cpu_count() or 1)
        workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return int(workers)


def make_pmap(workers: Union[int, str, None] = 1) -> PMap:
    """A map over threads whose output order matches the input order.

    Tasks draw their randomness from per-path counter-based streams, so the
    result does not depend on how many workers run them.
    """
    n = resolve_workers(workers)
    if n == 1:
        return serial_map

    def pmap(fn, items):
        items = list(items)
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(fn, items))

    pmap.workers = n
    return pmap
