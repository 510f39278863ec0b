import argparse
import asyncio
import sys
from pathlib import Path
from typing import Sequence, TextIO

from contract_slide.cli.delta_script import (
    DeltaScriptError,
    LogicalInput,
    RecordGenerator,
    load_delta_script,
    random_deltas,
    resolve_script,
)
from contract_slide.cli.experiments import overhead_experiment, parse_sweep, run_sweep
from contract_slide.cli.reporting import StatsReport, StatsRow
from contract_slide.core.config import MAX_TREE_SEED, get_settings
from contract_slide.core.enums import TreeVariant, WorkloadName
from contract_slide.core.errors import ContractSlideError
from contract_slide.core.logging import configure_logging, get_logger
from contract_slide.core.model import KVPair
from contract_slide.infrastructure.memo_store import MemoStoreError
from contract_slide.services.contraction_tree import TreeError, TreeMode
from contract_slide.services.engine import (
    Job,
    JobMismatchError,
    ModeViolationError,
    SlideBucket,
    SlideEngine,
    UnknownChunkError,
    UpdateDelta,
)
from contract_slide.services.oracle import scratch_run
from contract_slide.services.udf import UnknownWorkloadError
from contract_slide.services.workloads import builtin_workload

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

USAGE_ERRORS = (
    DeltaScriptError,
    ModeViolationError,
    UnknownChunkError,
    JobMismatchError,
    UnknownWorkloadError,
    TreeError,
    ValueError,
)

log = get_logger(__name__)


class VerificationError(ContractSlideError):
    """Raised when an engine run disagrees with the from-scratch pipeline."""


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < MAX_TREE_SEED:
        raise argparse.ArgumentTypeError("must fit in 64 bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="contract-slide",
        description="Incremental MapReduce with self-adjusting contraction trees.",
    )
    parser.add_argument("--workload", choices=[name.value for name in WorkloadName], default=WorkloadName.WORDCOUNT.value)
    parser.add_argument("--mode", choices=[variant.value for variant in TreeVariant], default=TreeVariant.VARIABLE.value)
    parser.add_argument("--buckets", type=_positive, help="window size B for --mode fixed")
    parser.add_argument("--split-size", type=_positive, default=settings.split_size)
    parser.add_argument("--tree-seed", type=_u64, default=settings.tree_seed)
    parser.add_argument("--memo-path", type=Path, default=settings.memo_path)
    parser.add_argument("--deltas", type=Path, help="delta script to apply after the initial run")
    parser.add_argument("--gen-records", type=_non_negative, default=100, help="records in the generated initial input")
    parser.add_argument("--gen-deltas", type=_non_negative, default=0, help="random mode-valid deltas appended to the script")
    parser.add_argument("--seed", type=_u64, default=0)
    parser.add_argument("--alphabet", type=_positive, default=16, help="distinct tokens or values in generated records")
    parser.add_argument("--chunk-records", type=_positive, default=settings.chunk_records)
    parser.add_argument("--verify", action="store_true", help="check every run against the from-scratch pipeline")
    parser.add_argument("--stats-out", type=Path, help="CSV file for the per-run statistics")
    parser.add_argument("--sweep", help="scaling sweep over n_m, e.g. n_m=2^8..2^12")
    parser.add_argument("--trials", type=_positive, default=5, help="seeds per sweep point")
    parser.add_argument("--edit-pairs", type=_positive, default=1, help="pairs emitted by the edited record in a sweep")
    parser.add_argument(
        "--edit-one-record",
        action="store_true",
        help="sweep edit inserts one record emitting --edit-pairs pairs (default: rewrite one whole chunk)",
    )
    parser.add_argument("--workers", type=_positive, default=settings.workers)
    parser.add_argument("--no-memo", action="store_true", help="run the direct map-fold-reduce pipeline only")
    parser.add_argument("--overhead", action="store_true", help="compare memo+trees against the direct pipeline")
    parser.add_argument("--log-level", default=settings.log_level)
    return parser


def _mode(args: argparse.Namespace) -> TreeMode:
    variant = TreeVariant(args.mode)
    if variant is TreeVariant.FIXED:
        if args.buckets is None:
            raise ModeViolationError("--mode fixed needs --buckets")
        return TreeMode.fixed(args.buckets)
    if args.buckets is not None:
        raise ModeViolationError(f"--buckets only applies to --mode fixed, not {variant}")
    return TreeMode(variant)


def _check(run: int, engine_output: list[KVPair], logical: LogicalInput, job: Job) -> None:
    expected = scratch_run(job, logical.chunks).output
    if engine_output != expected:
        log.error("verification_mismatch", run=run, engine_pairs=len(engine_output), oracle_pairs=len(expected))
        raise VerificationError(f"run {run} differs from the from-scratch result")


async def run_command(args: argparse.Namespace, *, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    settings = get_settings()
    mode = _mode(args)
    workload = builtin_workload(args.workload, bucket_width=settings.histogram_bucket_width)
    generator = RecordGenerator(
        WorkloadName(args.workload),
        alphabet=args.alphabet,
        words_per_record=settings.words_per_record,
    )

    if args.sweep:
        sweep = await run_sweep(
            parse_sweep(args.sweep),
            trials=args.trials,
            edit_pairs=args.edit_pairs,
            alphabet=args.alphabet,
            chunk_records=args.chunk_records,
            seed=args.seed,
            workers=args.workers,
            edit_one_record=args.edit_one_record,
        )
        out.write(sweep.to_csv())
        out.write(sweep.summary() + "\n")
        if args.stats_out:
            sweep.write_csv(args.stats_out)
        return EXIT_OK

    job = Job.from_workload(workload, mode, split_size=args.split_size, tree_seed=args.tree_seed)
    chunks = generator.chunks(args.gen_records, args.seed, args.chunk_records)
    streamed: list[UpdateDelta] = []
    if mode.variant is TreeVariant.FIXED and len(chunks) > args.buckets:
        # The window opens on the first B buckets; the rest of the stream slides in.
        chunks, spill = chunks[:args.buckets], chunks[args.buckets:]
        streamed = [UpdateDelta.of(SlideBucket(chunk.records)) for chunk in spill]

    if args.overhead:
        overhead = await overhead_experiment(job, chunks, workers=args.workers)
        out.write(overhead.report.render_table() + "\n")
        out.write(overhead.summary() + "\n")
        if args.stats_out:
            overhead.report.write_csv(args.stats_out)
        return EXIT_OK

    logical = LogicalInput(chunks, mode)
    deltas = streamed + (resolve_script(load_delta_script(args.deltas), generator) if args.deltas else [])
    if args.gen_deltas:
        shadow = LogicalInput(chunks, mode)
        for delta in deltas:
            shadow.apply(delta)
        deltas += random_deltas(generator, shadow, args.gen_deltas, args.seed + 1, chunk_records=args.chunk_records)

    report = StatsReport()
    if args.no_memo:
        report.add(StatsRow.from_oracle(0, str(mode), scratch_run(job, logical.chunks)))
        for index, delta in enumerate(deltas, start=1):
            logical.apply(delta)
            report.add(StatsRow.from_oracle(index, str(mode), scratch_run(job, logical.chunks)))
    else:
        engine = (
            SlideEngine.restore(args.memo_path, workers=args.workers)
            if args.memo_path is not None and args.memo_path.exists()
            else SlideEngine(workers=args.workers, memo_path=args.memo_path)
        )
        result = await engine.initial_run(job, chunks)
        report.add(StatsRow.from_result(0, str(mode), result))
        if args.verify:
            _check(0, result.output, logical, job)
        for index, delta in enumerate(deltas, start=1):
            result = await engine.dynamic_update(job, delta)
            logical.apply(delta)
            report.add(StatsRow.from_result(index, str(mode), result))
            if args.verify:
                _check(index, result.output, logical, job)

    out.write(report.render_table() + "\n")
    if args.stats_out:
        report.write_csv(args.stats_out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return asyncio.run(run_command(args))
    except (VerificationError, MemoStoreError) as exc:
        log.error("run_failed", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractSlideError as exc:
        log.error("run_failed", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
