"""From-scratch reference pipeline: map, group by key, left fold, reduce.

Uses nothing from the tree engine or the memo store; only the UDFs are shared.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from contract_slide.core.enums import TreeVariant
from contract_slide.core.model import Chunk, KVPair

if TYPE_CHECKING:
    from contract_slide.services.engine import Job


@dataclass(slots=True)
class OracleResult:
    output: list[KVPair] = field(default_factory=list)
    n_i: int = 0
    n_m: int = 0
    map_tasks: int = 0
    reduce_tasks: int = 0
    wall_seconds: float = 0.0

    @property
    def total_tasks(self) -> int:
        return self.map_tasks + self.reduce_tasks


def _count_splits(job: Job, chunks: Sequence[Chunk]) -> int:
    if job.mode.variant is TreeVariant.FIXED:
        return len(chunks)
    splits, pending = 0, 0
    for index, chunk in enumerate(chunks):
        pending += len(chunk.records)
        if pending >= job.split_size or index == len(chunks) - 1:
            splits += 1
            pending = 0
    return splits


def scratch_run(job: Job, chunks: Sequence[Chunk]) -> OracleResult:
    started = time.perf_counter()
    result = OracleResult(map_tasks=_count_splits(job, chunks))

    grouped: dict[bytes, list[bytes]] = {}
    for chunk in chunks:
        for record in chunk.records:
            result.n_i += 1
            for pair in job.map_fn(record):
                result.n_m += 1
                grouped.setdefault(pair.key, []).append(pair.value)

    for key, values in grouped.items():
        accumulator = [values[0]]
        for value in values[1:]:
            accumulator = job.combine_fn(key, accumulator + [value])
        result.output.extend(job.reduce_fn(key, accumulator))
        result.reduce_tasks += 1

    result.output.sort()
    result.wall_seconds = time.perf_counter() - started
    return result
