"""Scaling sweep and overhead measurement driven from the command line."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from contract_slide.cli.delta_script import DeltaScriptError, RecordGenerator
from contract_slide.cli.reporting import StatsReport, StatsRow
from contract_slide.core.enums import WorkloadName
from contract_slide.core.logging import get_logger
from contract_slide.core.model import Chunk
from contract_slide.services.contraction_tree import TreeMode
from contract_slide.services.engine import Job, ReplaceChunk, SlideEngine, UpdateDelta
from contract_slide.services.oracle import scratch_run
from contract_slide.services.workloads import builtin_workload

log = get_logger(__name__)

_SWEEP = re.compile(r"^n_m=2\^(?P<low>\d+)\.\.2\^(?P<high>\d+)(?::(?P<step>\d+))?$")
SWEEP_COLUMNS = (
    "n_m", "n_i", "trials", "median_fresh_combine", "median_fresh_reduce",
    "fresh_combine_bound", "max_total_tasks", "task_bound",
)


def parse_sweep(text: str) -> list[int]:
    """``n_m=2^a..2^b[:step]`` to the list of target pair counts."""
    match = _SWEEP.match(text.strip())
    if match is None:
        raise DeltaScriptError(f"sweep must look like n_m=2^8..2^12[:2], got {text!r}")
    low, high = int(match["low"]), int(match["high"])
    step = int(match["step"] or 1)
    if low > high or step < 1 or high > 30:
        raise DeltaScriptError(f"invalid sweep range {text!r}")
    return [2**exponent for exponent in range(low, high + 1, step)]


@dataclass(slots=True)
class SweepPoint:
    n_m: int
    n_i: int
    edit_pairs: int
    fresh_combine: list[int] = field(default_factory=list)
    fresh_reduce: list[int] = field(default_factory=list)
    total_tasks: list[int] = field(default_factory=list)

    @property
    def median_fresh_combine(self) -> float:
        return float(np.median(self.fresh_combine))

    @property
    def median_fresh_reduce(self) -> float:
        return float(np.median(self.fresh_reduce))

    @property
    def fresh_combine_bound(self) -> float:
        return 2 * self.edit_pairs * (math.log2(self.n_m) + 1)

    @property
    def task_bound(self) -> int:
        return 3 * (self.n_i + self.n_m)

    def as_dict(self) -> dict[str, object]:
        return {
            "n_m": self.n_m,
            "n_i": self.n_i,
            "trials": len(self.fresh_combine),
            "median_fresh_combine": self.median_fresh_combine,
            "median_fresh_reduce": self.median_fresh_reduce,
            "fresh_combine_bound": round(self.fresh_combine_bound, 3),
            "max_total_tasks": max(self.total_tasks, default=0),
            "task_bound": self.task_bound,
        }


@dataclass(slots=True)
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)
    slope: float = 0.0
    intercept: float = 0.0
    r_squared: float = 0.0

    def fit(self) -> None:
        """Least-squares line of median fresh combines against log2 n_m."""
        if len(self.points) < 2:
            self.r_squared = 1.0
            return
        x = np.log2([point.n_m for point in self.points])
        y = np.array([point.median_fresh_combine for point in self.points])
        self.slope, self.intercept = (float(value) for value in np.polyfit(x, y, 1))
        residual = float(np.sum((y - (self.slope * x + self.intercept)) ** 2))
        total = float(np.sum((y - y.mean()) ** 2))
        self.r_squared = 1.0 if total == 0 else 1.0 - residual / total

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for point in self.points:
            writer.writerow(point.as_dict())
        return buffer.getvalue()

    def write_csv(self, path: Path | str) -> None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.to_csv(), encoding="utf-8")

    def summary(self) -> str:
        return f"fit: fresh_combine = {self.slope:.3f} * log2(n_m) + {self.intercept:.3f}  (R^2 = {self.r_squared:.3f})"


def _insert_one_record(
    chunks: Sequence[Chunk],
    generator: RecordGenerator,
    seed: int,
) -> ReplaceChunk:
    rng = np.random.default_rng(seed)
    target = chunks[int(rng.integers(0, len(chunks)))]
    position = int(rng.integers(0, len(target.records) + 1))
    inserted = generator.records(1, int(rng.integers(0, 2**32)))[0]
    records = target.records[:position] + (inserted,) + target.records[position:]
    return ReplaceChunk(target.id, records)


def _rewrite_one_chunk(
    chunks: Sequence[Chunk],
    generator: RecordGenerator,
    seed: int,
) -> ReplaceChunk:
    rng = np.random.default_rng(seed)
    target = chunks[int(rng.integers(0, len(chunks)))]
    return ReplaceChunk(target.id, generator.records(len(target.records), int(rng.integers(0, 2**32))))


async def run_sweep(
    sizes: Sequence[int],
    *,
    trials: int,
    edit_pairs: int,
    alphabet: int,
    chunk_records: int,
    seed: int,
    workers: int,
    edit_one_record: bool = True,
) -> SweepResult:
    """Edit variable-width wordcount once at growing n_m and record the fresh work.

    The edit inserts one record emitting ``edit_pairs`` pairs, or with
    ``edit_one_record`` off rewrites a whole chunk, in which case every record of
    the chunk counts towards k.
    """
    workload = builtin_workload(WorkloadName.WORDCOUNT)
    generator = RecordGenerator(WorkloadName.WORDCOUNT, alphabet=alphabet, words_per_record=edit_pairs)
    make_edit = _insert_one_record if edit_one_record else _rewrite_one_chunk
    touched = edit_pairs if edit_one_record else edit_pairs * chunk_records
    result = SweepResult()
    for n_m in sizes:
        records = max(1, n_m // edit_pairs)
        point = SweepPoint(n_m=records * edit_pairs, n_i=records, edit_pairs=touched)
        for trial in range(trials):
            trial_seed = seed + trial
            job = Job.from_workload(workload, TreeMode.variable(), tree_seed=trial_seed)
            chunks = generator.chunks(records, trial_seed, chunk_records)
            engine = SlideEngine(workers=workers)
            initial = await engine.initial_run(job, chunks)
            update = await engine.dynamic_update(job, UpdateDelta.of(make_edit(chunks, generator, trial_seed)))
            point.fresh_combine.append(update.stats.combine_run)
            point.fresh_reduce.append(update.stats.reduce_run)
            point.total_tasks.append(max(initial.stats.total_tasks, update.stats.total_tasks))
        log.info(
            "sweep_point",
            n_m=point.n_m,
            trials=trials,
            edit="record" if edit_one_record else "chunk",
            median_fresh_combine=point.median_fresh_combine,
            median_fresh_reduce=point.median_fresh_reduce,
        )
        result.points.append(point)
    result.fit()
    return result


@dataclass(frozen=True, slots=True)
class OverheadReport:
    memoized: StatsRow
    direct: StatsRow

    @property
    def task_delta(self) -> int:
        return self.memoized.stats.total_tasks - self.direct.stats.total_tasks

    @property
    def wall_ratio(self) -> float:
        if self.direct.wall_seconds <= 0:
            return math.inf
        return self.memoized.wall_seconds / self.direct.wall_seconds

    @property
    def report(self) -> StatsReport:
        return StatsReport([self.memoized, self.direct])

    def summary(self) -> str:
        return (
            f"memo+trees: {self.memoized.stats.total_tasks} tasks in {self.memoized.wall_seconds:.6f}s; "
            f"direct: {self.direct.stats.total_tasks} tasks in {self.direct.wall_seconds:.6f}s; "
            f"task delta {self.task_delta} (N_C = {self.memoized.stats.combine_stages}); "
            f"wall ratio {self.wall_ratio:.2f}"
        )


async def overhead_experiment(job: Job, chunks: Sequence[Chunk], *, workers: int) -> OverheadReport:
    """Same initial computation with memoization and trees, then through the direct pipeline."""
    engine = SlideEngine(workers=workers)
    report = OverheadReport(
        memoized=StatsRow.from_result(0, str(job.mode), await engine.initial_run(job, chunks)),
        direct=StatsRow.from_oracle(0, "direct", scratch_run(job, chunks)),
    )
    log.info(
        "overhead_measured",
        memoized_tasks=report.memoized.stats.total_tasks,
        direct_tasks=report.direct.stats.total_tasks,
        task_delta=report.task_delta,
        combine_stages=report.memoized.stats.combine_stages,
        wall_ratio=round(report.wall_ratio, 3),
    )
    return report
