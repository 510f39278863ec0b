from __future__ import annotations

import asyncio
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TypeAlias

from contract_slide.core.config import MAX_TREE_SEED, get_settings
from contract_slide.core.encoding import canonical_encode, decode_kv_list, decode_partial, fingerprint_of
from contract_slide.core.enums import DeltaKind, TaskKind, TreeVariant
from contract_slide.core.errors import ContractSlideError
from contract_slide.core.logging import get_logger
from contract_slide.core.model import (
    Chunk,
    Fingerprint,
    FingerprintList,
    FreshReport,
    FreshTask,
    KeyedValues,
    KVPair,
    Partial,
    Record,
    RecordList,
    RunStats,
    TaskId,
)
from contract_slide.infrastructure.memo_store import (
    AccumulatorEntry,
    EngineSnapshot,
    LedgerEntry,
    MemoStore,
    StoreStats,
)
from contract_slide.services.contraction_tree import (
    ContractionTree,
    DirtySet,
    NodeId,
    TreeMode,
    accumulator_identity,
    build_append,
    build_fixed,
    build_variable,
    leaf_identity,
    propagate,
)
from contract_slide.services.udf import CombineFn, MapFn, ReduceFn, Workload
from contract_slide.services.worker_pool import WorkerPool, run_task

_CHUNK_ID = struct.Struct(">Q")


class EngineError(ContractSlideError):
    """Raised when the engine cannot perform a run."""


class ModeViolationError(EngineError):
    """Raised when a job or delta is not valid for the tree mode."""


class UnknownChunkError(EngineError):
    """Raised when a delta references a chunk id that is not in the input."""


class JobMismatchError(EngineError):
    """Raised when an update is requested for a job other than the one last run."""


class MissingChunkDataError(EngineError):
    """Raised when a fresh Map task needs records the engine no longer holds."""


class SeriesAbortedError(EngineError):
    """Raised when a delta of a series fails; carries the runs completed before it."""

    def __init__(self, message: str, *, index: int, results: list[RunResult]) -> None:
        super().__init__(message)
        self.index = index
        self.results = results


@dataclass(frozen=True)
class Job:
    map_fn: MapFn
    combine_fn: CombineFn
    reduce_fn: ReduceFn
    mode: TreeMode
    split_size: int = 1
    tree_seed: int = 0

    def __post_init__(self) -> None:
        if self.split_size < 1:
            raise ValueError("split_size must be at least 1")
        if not 0 <= self.tree_seed < MAX_TREE_SEED:
            raise ValueError("tree_seed must fit in 64 bits")
        if self.mode.variant is TreeVariant.FIXED:
            if not (self.combine_fn.commutative and self.combine_fn.has_identity):
                raise ModeViolationError(
                    f"fixed-width windows need a commutative combine with an identity; "
                    f"{self.combine_fn.name!r} does not declare both"
                )

    @classmethod
    def from_workload(
        cls,
        workload: Workload,
        mode: TreeMode,
        *,
        split_size: int = 1,
        tree_seed: int = 0,
    ) -> Job:
        return cls(
            map_fn=workload.map_fn,
            combine_fn=workload.combine_fn,
            reduce_fn=workload.reduce_fn,
            mode=mode,
            split_size=split_size,
            tree_seed=tree_seed,
        )

    @property
    def identity(self) -> Fingerprint:
        return fingerprint_of(
            KeyedValues(
                b"job",
                (
                    self.map_fn.fn_id.digest,
                    self.combine_fn.fn_id.digest,
                    self.reduce_fn.fn_id.digest,
                    str(self.mode).encode(),
                    str(self.split_size).encode(),
                    str(self.tree_seed).encode(),
                ),
            )
        )


@dataclass(frozen=True, slots=True)
class AppendChunk:
    records: tuple[Record, ...]
    kind = DeltaKind.APPEND


@dataclass(frozen=True, slots=True)
class ReplaceChunk:
    chunk_id: int
    records: tuple[Record, ...]
    kind = DeltaKind.REPLACE


@dataclass(frozen=True, slots=True)
class DeleteChunk:
    chunk_id: int
    kind = DeltaKind.DELETE


@dataclass(frozen=True, slots=True)
class SlideBucket:
    records: tuple[Record, ...]
    kind = DeltaKind.SLIDE


DeltaOp: TypeAlias = AppendChunk | ReplaceChunk | DeleteChunk | SlideBucket


@dataclass(frozen=True, slots=True)
class UpdateDelta:
    ops: tuple[DeltaOp, ...] = ()

    @classmethod
    def of(cls, *ops: DeltaOp) -> UpdateDelta:
        return cls(tuple(ops))

    def __len__(self) -> int:
        return len(self.ops)


@dataclass(slots=True)
class RunResult:
    output: list[KVPair]
    stats: RunStats
    fresh_report: FreshReport
    chunk_ids: list[int] = field(default_factory=list)
    new_chunk_ids: list[int] = field(default_factory=list)
    store: StoreStats | None = None
    evicted: int = 0
    wall_seconds: float = 0.0


@dataclass(frozen=True, slots=True)
class Split:
    ident: Fingerprint
    chunk_ids: tuple[int, ...]
    input_fp: Fingerprint
    record_count: int
    slot: int | None = None


@dataclass(frozen=True, slots=True)
class _Accumulator:
    value: Partial
    pairs: int


@dataclass(slots=True)
class _InputState:
    ledger: list[LedgerEntry]
    chunks: dict[int, Chunk]
    next_chunk_id: int
    new_chunk_ids: list[int] = field(default_factory=list)
    accumulators: dict[bytes, _Accumulator] = field(default_factory=dict)
    folded: int = 0


def content_fingerprint(records: Sequence[Record]) -> Fingerprint:
    return fingerprint_of(RecordList(tuple(records)))


def _apply_map(map_fn: MapFn, records: Sequence[Record]) -> list[KVPair]:
    pairs: list[KVPair] = []
    for record in records:
        pairs.extend(map_fn(record))
    return pairs


class SlideEngine:
    """Runs a job once from scratch, then applies input deltas incrementally.

    Every Map, Combine and Reduce output is memoized under a content-derived
    task id; an update executes only tasks whose input changed. Between runs
    the engine keeps the input ledger, the chunk contents it was given and the
    evaluated tree shapes; the memo file holds everything else. Append-only
    jobs keep one folded accumulator per key instead of trees and chunks.
    """

    def __init__(
        self,
        memo: MemoStore | None = None,
        *,
        workers: int | None = None,
        strict_memo: bool | None = None,
        memo_path: Path | str | None = None,
    ) -> None:
        settings = get_settings()
        self._memo = memo if memo is not None else MemoStore()
        self._workers = workers or settings.workers
        self._strict = settings.strict_memo if strict_memo is None else strict_memo
        self._memo_path = Path(memo_path) if memo_path is not None else None
        snapshot = self._memo.snapshot
        self._job_fp = snapshot.job_fp
        self._ledger: list[LedgerEntry] = list(snapshot.ledger)
        self._next_chunk_id = snapshot.next_chunk_id
        self._chunks: dict[int, Chunk] = {}
        self._trees: dict[bytes, ContractionTree] = {}
        self._accumulators = {
            acc.key: _Accumulator(decode_partial(acc.value), acc.pairs) for acc in snapshot.accumulators
        }
        self._log = get_logger(__name__)
        self.last_result: RunResult | None = None

    @classmethod
    def restore(cls, path: Path | str, **kwargs) -> SlideEngine:
        """Reload a persisted memo file together with the ledger of its last run."""
        kwargs.setdefault("memo_path", path)
        return cls(MemoStore.load(path), **kwargs)

    @property
    def memo(self) -> MemoStore:
        return self._memo

    @property
    def workers(self) -> int:
        return self._workers

    @property
    def chunk_ids(self) -> list[int]:
        return [entry.chunk_id for entry in self._ledger]

    @property
    def stats(self) -> RunStats | None:
        return self.last_result.stats if self.last_result else None

    def save(self, path: Path | str | None = None) -> Path:
        target = Path(path) if path is not None else self._memo_path
        if target is None:
            raise EngineError("no memo path configured")
        return self._memo.persist(target)

    async def initial_run(self, job: Job, chunks: Sequence[Chunk]) -> RunResult:
        seen: set[int] = set()
        for chunk in chunks:
            if chunk.id in seen:
                raise EngineError(f"duplicate chunk id {chunk.id}")
            seen.add(chunk.id)
        if job.mode.variant is TreeVariant.FIXED and len(chunks) > job.mode.bucket_count:
            raise ModeViolationError(
                f"{len(chunks)} chunks do not fit a window of {job.mode.bucket_count} buckets"
            )

        fixed = job.mode.variant is TreeVariant.FIXED
        state = _InputState(
            ledger=[
                LedgerEntry(
                    chunk_id=chunk.id,
                    record_count=len(chunk.records),
                    content_fp=content_fingerprint(chunk.records),
                    slot=index if fixed else None,
                )
                for index, chunk in enumerate(chunks)
            ],
            chunks={chunk.id: chunk for chunk in chunks},
            next_chunk_id=max(seen, default=-1) + 1,
        )
        return await self._run(job, state, previous_trees={}, kind="initial")

    async def dynamic_update(self, job: Job, delta: UpdateDelta) -> RunResult:
        if self._job_fp is None:
            raise EngineError("dynamic_update needs a completed initial run")
        if job.identity != self._job_fp:
            raise JobMismatchError("update job differs from the job of the previous run")
        try:
            state = self._apply_delta(job, delta)
        except EngineError as exc:
            self._log.warning("delta_rejected", error=str(exc), ops=len(delta))
            raise
        return await self._run(job, state, previous_trees=self._trees, kind="update")

    async def run_series(
        self,
        job: Job,
        chunks: Sequence[Chunk],
        deltas: Sequence[UpdateDelta],
    ) -> list[RunResult]:
        results = [await self.initial_run(job, chunks)]
        for index, delta in enumerate(deltas):
            try:
                results.append(await self.dynamic_update(job, delta))
            except ContractSlideError as exc:
                self._log.error("series_aborted", index=index, error=str(exc))
                raise SeriesAbortedError(
                    f"delta {index} failed: {exc}", index=index, results=results
                ) from exc
        return results

    def _apply_delta(self, job: Job, delta: UpdateDelta) -> _InputState:
        state = _InputState(
            ledger=list(self._ledger),
            chunks=dict(self._chunks),
            next_chunk_id=self._next_chunk_id,
            accumulators=dict(self._accumulators),
            folded=len(self._ledger),
        )
        variant = job.mode.variant
        for op in delta.ops:
            match op:
                case AppendChunk(records=records):
                    if variant is TreeVariant.FIXED:
                        self._slide(job, state, records)
                    else:
                        self._ingest(state, records, slot=None)
                case SlideBucket(records=records):
                    if variant is not TreeVariant.FIXED:
                        raise ModeViolationError(f"slide is only valid for fixed-width windows, not {job.mode}")
                    self._slide(job, state, records)
                case ReplaceChunk(chunk_id=chunk_id, records=records):
                    if variant is TreeVariant.APPEND:
                        raise ModeViolationError("append-only input rejects chunk replacement")
                    index = self._locate(state, chunk_id)
                    old = state.ledger[index]
                    state.ledger[index] = LedgerEntry(
                        chunk_id=chunk_id,
                        record_count=len(records),
                        content_fp=content_fingerprint(records),
                        slot=old.slot,
                    )
                    state.chunks[chunk_id] = Chunk(chunk_id, tuple(records))
                case DeleteChunk(chunk_id=chunk_id):
                    if variant is TreeVariant.APPEND:
                        raise ModeViolationError("append-only input rejects chunk deletion")
                    index = self._locate(state, chunk_id)
                    state.ledger.pop(index)
                    state.chunks.pop(chunk_id, None)
                case _:
                    raise EngineError(f"unsupported delta op {op!r}")
        return state

    @staticmethod
    def _locate(state: _InputState, chunk_id: int) -> int:
        for index, entry in enumerate(state.ledger):
            if entry.chunk_id == chunk_id:
                return index
        raise UnknownChunkError(f"chunk {chunk_id} is not part of the current input")

    @staticmethod
    def _ingest(state: _InputState, records: Sequence[Record], *, slot: int | None) -> None:
        chunk = Chunk(state.next_chunk_id, tuple(records))
        state.next_chunk_id += 1
        state.chunks[chunk.id] = chunk
        state.new_chunk_ids.append(chunk.id)
        state.ledger.append(
            LedgerEntry(
                chunk_id=chunk.id,
                record_count=len(chunk.records),
                content_fp=content_fingerprint(chunk.records),
                slot=slot,
            )
        )

    def _slide(self, job: Job, state: _InputState, records: Sequence[Record]) -> None:
        bucket_count = job.mode.bucket_count or 0
        if len(state.ledger) >= bucket_count:
            oldest = state.ledger.pop(0)
            state.chunks.pop(oldest.chunk_id, None)
            slot = oldest.slot
        else:
            used = {entry.slot for entry in state.ledger}
            slot = min(set(range(bucket_count)) - used)
        self._ingest(state, records, slot=slot)

    def _plan_splits(self, job: Job, ledger: Sequence[LedgerEntry]) -> list[Split]:
        if job.mode.variant is TreeVariant.FIXED:
            groups = [[entry] for entry in ledger]
        else:
            groups, current, records = [], [], 0
            for entry in ledger:
                current.append(entry)
                records += entry.record_count
                if records >= job.split_size:
                    groups.append(current)
                    current, records = [], 0
            if current:
                groups.append(current)

        splits = []
        for group in groups:
            chunk_ids = tuple(entry.chunk_id for entry in group)
            splits.append(
                Split(
                    ident=leaf_identity(b"".join(_CHUNK_ID.pack(chunk_id) for chunk_id in chunk_ids)),
                    chunk_ids=chunk_ids,
                    input_fp=fingerprint_of(FingerprintList(tuple(entry.content_fp for entry in group))),
                    record_count=sum(entry.record_count for entry in group),
                    slot=group[0].slot,
                )
            )
        return splits

    async def _run(
        self,
        job: Job,
        state: _InputState,
        *,
        previous_trees: dict[bytes, ContractionTree],
        kind: str,
    ) -> RunResult:
        started = time.perf_counter()
        epoch = self._memo.begin_run()
        self._log.info("run_started", kind=kind, epoch=epoch, mode=str(job.mode), chunks=len(state.ledger))
        append = job.mode.variant is TreeVariant.APPEND
        stats = RunStats(n_i=sum(entry.record_count for entry in state.ledger))
        report = FreshReport()
        try:
            with WorkerPool(self._workers) as pool:
                pending_ledger = state.ledger[state.folded:] if append else state.ledger
                splits = self._plan_splits(job, pending_ledger)
                outputs = await self._map_phase(job, splits, state.chunks, pool, stats, report)
                trees, pairs = self._shuffle(job, splits, outputs, state.accumulators)
                keys = sorted(trees)
                dirty_sets = {key: self._dirty_leaves(trees[key], previous_trees.get(key)) for key in keys}
                propagations = await asyncio.gather(
                    *(
                        propagate(
                            trees[key],
                            dirty_sets[key],
                            job.combine_fn,
                            self._memo,
                            pool=pool,
                            strict=self._strict,
                        )
                        for key in keys
                    )
                )
                roots: dict[bytes, Partial] = {}
                for key, outcome in zip(keys, propagations):
                    stats.combine_run += outcome.fresh
                    stats.combine_hit += outcome.hits
                    stats.monotonic_violations += outcome.violations
                    report.tasks.extend(outcome.executed)
                    roots[key] = outcome.root or Partial()

                if append:
                    for key, root in roots.items():
                        folded = state.accumulators.get(key)
                        state.accumulators[key] = _Accumulator(
                            root, pairs[key] + (folded.pairs if folded else 0)
                        )
                    roots = {key: acc.value for key, acc in state.accumulators.items()}
                    stats.n_m = sum(acc.pairs for acc in state.accumulators.values())
                else:
                    stats.n_m = sum(pairs.values())
                stats.n_mk = len(roots)
                output = await self._reduce_phase(job, roots, pool, stats, report)
        except Exception as exc:
            dropped = self._memo.abort_run()
            self._log.error("run_aborted", kind=kind, error=str(exc), dropped_entries=dropped)
            raise

        stats.n_o = len(output)
        stats.combine_stages = sum(sum(1 for _ in tree.internal_nodes()) for tree in trees.values())
        stats.max_depth = max((tree.depth for tree in trees.values()), default=0)
        stats.check()
        evicted = self._memo.end_run_evict()

        if append:
            self._trees = {}
            self._chunks = {}
        else:
            for tree in trees.values():
                tree.release_values()
            self._trees = trees
            self._chunks = state.chunks
        self._accumulators = state.accumulators
        self._ledger = state.ledger
        self._next_chunk_id = state.next_chunk_id
        self._job_fp = job.identity
        self._memo.snapshot = EngineSnapshot(
            job_fp=self._job_fp,
            next_chunk_id=self._next_chunk_id,
            ledger=list(self._ledger),
            accumulators=[
                AccumulatorEntry(key=key, pairs=acc.pairs, value=canonical_encode(acc.value))
                for key, acc in sorted(self._accumulators.items())
            ],
        )
        if self._memo_path is not None:
            self._memo.persist(self._memo_path)

        result = RunResult(
            output=output,
            stats=stats,
            fresh_report=report,
            chunk_ids=self.chunk_ids,
            new_chunk_ids=list(state.new_chunk_ids),
            store=self._memo.stats(),
            evicted=evicted,
            wall_seconds=time.perf_counter() - started,
        )
        self._log.info(
            "run_completed",
            kind=kind,
            epoch=epoch,
            fresh_map=stats.map_run,
            fresh_combine=stats.combine_run,
            fresh_reduce=stats.reduce_run,
            memo_entries=result.store.entries,
            evicted=evicted,
            wall_seconds=round(result.wall_seconds, 6),
        )
        self.last_result = result
        return result

    async def _map_phase(
        self,
        job: Job,
        splits: Sequence[Split],
        chunks: dict[int, Chunk],
        pool: WorkerPool,
        stats: RunStats,
        report: FreshReport,
    ) -> list[list[KVPair]]:
        outputs: list[list[KVPair] | None] = [None] * len(splits)
        pending: list[tuple[int, TaskId, list[Record]]] = []
        for index, split in enumerate(splits):
            task_id = TaskId(TaskKind.MAP, job.map_fn.fn_id, split.input_fp)
            entry = self._memo.get(task_id)
            if entry is not None:
                outputs[index] = decode_kv_list(entry.output)
                stats.map_hit += 1
                continue
            missing = [chunk_id for chunk_id in split.chunk_ids if chunk_id not in chunks]
            if missing:
                raise MissingChunkDataError(f"records of chunks {missing} are not held by this engine")
            records = [record for chunk_id in split.chunk_ids for record in chunks[chunk_id].records]
            pending.append((index, task_id, records))

        executed = await asyncio.gather(
            *(run_task(pool, _apply_map, job.map_fn, records) for _, _, records in pending)
        )
        for (index, task_id, _), (pairs, seconds) in zip(pending, executed):
            self._memo.put(task_id, canonical_encode(pairs))
            outputs[index] = pairs
            stats.map_run += 1
            report.tasks.append(FreshTask(TaskKind.MAP, task_id.short(), seconds))
        self._log.debug("map_phase_completed", splits=len(splits), fresh=len(pending))
        return [pairs or [] for pairs in outputs]

    def _shuffle(
        self,
        job: Job,
        splits: Sequence[Split],
        outputs: Sequence[list[KVPair]],
        accumulators: dict[bytes, _Accumulator],
    ) -> tuple[dict[bytes, ContractionTree], dict[bytes, int]]:
        grouped: dict[bytes, dict[int, list[bytes]]] = {}
        pairs: dict[bytes, int] = {}
        for index, emitted in enumerate(outputs):
            for pair in emitted:
                grouped.setdefault(pair.key, {}).setdefault(index, []).append(pair.value)
                pairs[pair.key] = pairs.get(pair.key, 0) + 1

        trees: dict[bytes, ContractionTree] = {}
        for key, per_split in grouped.items():
            match job.mode.variant:
                case TreeVariant.VARIABLE:
                    leaves = [(splits[i].ident, Partial(tuple(values))) for i, values in per_split.items()]
                    trees[key] = build_variable(leaves, job.tree_seed, key=key)
                case TreeVariant.APPEND:
                    leaves = [(splits[i].ident, Partial(tuple(values))) for i, values in per_split.items()]
                    folded = accumulators.get(key)
                    trees[key] = build_append(folded.value if folded else None, leaves, key=key)
                case TreeVariant.FIXED:
                    buckets = [Partial()] * (job.mode.bucket_count or 0)
                    for index, values in per_split.items():
                        buckets[splits[index].slot] = Partial(tuple(values))
                    trees[key] = build_fixed(buckets, job.mode.bucket_count, key=key)
        return trees, pairs

    @staticmethod
    def _dirty_leaves(tree: ContractionTree, previous: ContractionTree | None) -> DirtySet:
        if tree.mode.variant is TreeVariant.APPEND:
            # Appended partials sit next to a clean accumulator; a fresh key falls back to content lookups.
            seed = NodeId(0, accumulator_identity(tree.key))
            if seed not in tree:
                return DirtySet()
            return DirtySet([leaf.node_id for leaf in tree.leaves if leaf.node_id != seed])
        tree.inherit(previous)
        dirty = DirtySet()
        if previous is None:
            return dirty
        for leaf in tree.leaves:
            if leaf.prior is None or leaf.prior.payload_fp != leaf.payload_fp:
                dirty.mark(leaf.node_id)
        return dirty

    async def _reduce_phase(
        self,
        job: Job,
        roots: dict[bytes, Partial],
        pool: WorkerPool,
        stats: RunStats,
        report: FreshReport,
    ) -> list[KVPair]:
        keys = sorted(roots)
        results: list[list[KVPair] | None] = [None] * len(keys)
        pending: list[tuple[int, TaskId, KeyedValues]] = []
        for index, key in enumerate(keys):
            payload = KeyedValues(key, roots[key].values)
            task_id = TaskId(TaskKind.REDUCE, job.reduce_fn.fn_id, fingerprint_of(payload))
            entry = self._memo.get(task_id)
            if entry is not None:
                results[index] = decode_kv_list(entry.output)
                stats.reduce_hit += 1
                continue
            pending.append((index, task_id, payload))

        executed = await asyncio.gather(
            *(run_task(pool, job.reduce_fn, payload.key, payload.values) for _, _, payload in pending)
        )
        for (index, task_id, _), (pairs, seconds) in zip(pending, executed):
            self._memo.put(task_id, canonical_encode(pairs))
            results[index] = pairs
            stats.reduce_run += 1
            report.tasks.append(FreshTask(TaskKind.REDUCE, task_id.short(), seconds))

        output = [pair for pairs in results for pair in (pairs or [])]
        output.sort()
        return output
