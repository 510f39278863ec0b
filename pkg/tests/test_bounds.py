from __future__ import annotations

import math

import pytest

from contract_slide.cli.delta_script import RecordGenerator
from contract_slide.cli.experiments import SweepPoint, SweepResult, run_sweep
from contract_slide.core.enums import WorkloadName
from contract_slide.services.contraction_tree import TreeMode
from contract_slide.services.engine import Job, ReplaceChunk, SlideEngine, UpdateDelta
from contract_slide.services.workloads import builtin_workload


@pytest.mark.asyncio()
async def test_single_record_insert_stays_within_the_logarithmic_bound() -> None:
    sweep = await run_sweep(
        [2**8, 2**10],
        trials=5,
        edit_pairs=1,
        alphabet=16,
        chunk_records=8,
        seed=0,
        workers=2,
    )

    assert [point.n_m for point in sweep.points] == [256, 1024]
    for point in sweep.points:
        assert len(point.fresh_combine) == 5
        assert point.median_fresh_combine <= point.fresh_combine_bound
        assert all(fresh <= point.edit_pairs for fresh in point.fresh_reduce)
        assert max(point.total_tasks) <= point.task_bound


@pytest.mark.asyncio()
async def test_wider_edits_touch_at_most_their_own_keys() -> None:
    sweep = await run_sweep([2**8], trials=3, edit_pairs=4, alphabet=64, chunk_records=4, seed=5, workers=1)

    point = sweep.points[0]
    assert point.n_i == 64
    assert all(fresh <= 4 for fresh in point.fresh_reduce)
    assert point.median_fresh_combine <= point.fresh_combine_bound


def test_fit_recovers_an_exact_logarithmic_trend() -> None:
    result = SweepResult(
        points=[
            SweepPoint(n_m=2**exponent, n_i=2**exponent, edit_pairs=1, fresh_combine=[2 * exponent + 1])
            for exponent in range(4, 10)
        ]
    )

    result.fit()

    assert result.slope == pytest.approx(2.0)
    assert result.intercept == pytest.approx(1.0)
    assert result.r_squared == pytest.approx(1.0)


def test_fit_of_a_single_point_is_trivially_exact() -> None:
    result = SweepResult(points=[SweepPoint(n_m=8, n_i=8, edit_pairs=1, fresh_combine=[3])])

    result.fit()

    assert result.r_squared == 1.0
    assert result.slope == 0.0


def test_sweep_point_bounds() -> None:
    point = SweepPoint(
        n_m=1024, n_i=256, edit_pairs=3, fresh_combine=[4, 9, 5], fresh_reduce=[1, 1, 2], total_tasks=[10]
    )

    assert point.fresh_combine_bound == pytest.approx(2 * 3 * (math.log2(1024) + 1))
    assert point.task_bound == 3 * (256 + 1024)
    assert point.median_fresh_combine == 5.0
    assert point.as_dict()["max_total_tasks"] == 10


@pytest.mark.slow()
@pytest.mark.asyncio()
@pytest.mark.parametrize("edit_pairs", [1, 4])
async def test_fresh_combines_grow_logarithmically_across_the_full_sweep(edit_pairs: int) -> None:
    sweep = await run_sweep(
        [2**8, 2**10, 2**12, 2**14],
        trials=100,
        edit_pairs=edit_pairs,
        alphabet=16,
        chunk_records=8,
        seed=0,
        workers=4,
    )

    for point in sweep.points:
        assert point.median_fresh_combine <= point.fresh_combine_bound
        assert all(fresh <= edit_pairs for fresh in point.fresh_reduce)
        assert max(point.total_tasks) <= point.task_bound
    assert sweep.slope > 0
    assert sweep.r_squared >= 0.9


@pytest.mark.slow()
@pytest.mark.asyncio()
async def test_memo_space_stays_linear_at_full_size() -> None:
    generator = RecordGenerator(WorkloadName.WORDCOUNT, alphabet=4096, words_per_record=4)
    chunks = generator.chunks(2**12, 1, 8)
    job = Job.from_workload(builtin_workload(WorkloadName.WORDCOUNT), TreeMode.variable(), tree_seed=1)
    engine = SlideEngine(workers=4)

    first = await engine.initial_run(job, chunks)
    update = await engine.dynamic_update(job, UpdateDelta.of(ReplaceChunk(7, generator.records(8, 99))))

    for result in (first, update):
        assert result.stats.n_m == 2**14
        assert result.store.entries <= 3 * result.stats.n_m
        assert result.store.entries <= result.stats.total_tasks
        assert result.stats.total_tasks <= 3 * (result.stats.n_i + result.stats.n_m)
    assert len(engine.memo) == update.store.entries
