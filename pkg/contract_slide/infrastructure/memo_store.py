"""Content-addressed memo store that keeps only the most recent run.

File layout (all integers big-endian)::

    "CSLM" | version u32 | entry count u64 | entries | ledger section

    entry   = task kind u8 | fn_id (32) | input_fp (32) | output length u64
              | output | sha256 of the preceding entry bytes (32)
    ledger  = "LDGR" | payload length u64 | payload | sha256(payload) (32)
    payload = has job u8 | job fp (32) | next chunk id u64 | count u64
              | count x (chunk id u64 | record count u64 | slot u32 | content fp (32))
              | accumulator count u64
              | accumulator count x (key length u32 | key | pairs u64 | value length u64 | value)

The ledger section is always written so that truncation anywhere in the file
is detected.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

from contract_slide.core.enums import TaskKind
from contract_slide.core.errors import ContractSlideError
from contract_slide.core.logging import get_logger
from contract_slide.core.model import FINGERPRINT_SIZE, Fingerprint, TaskId

MAGIC = b"CSLM"
LEDGER_MAGIC = b"LDGR"
FORMAT_VERSION = 2
NO_SLOT = 0xFFFFFFFF

_HEADER = struct.Struct(">4sIQ")
_ENTRY_HEAD = struct.Struct(f">B{FINGERPRINT_SIZE}s{FINGERPRINT_SIZE}sQ")
_SECTION_HEAD = struct.Struct(">4sQ")
_LEDGER_HEAD = struct.Struct(f">B{FINGERPRINT_SIZE}sQQ")
_LEDGER_ROW = struct.Struct(f">QQI{FINGERPRINT_SIZE}s")
_COUNT = struct.Struct(">Q")
_ACC_KEY = struct.Struct(">I")
_ACC_BODY = struct.Struct(">QQ")

log = get_logger(__name__)


class MemoStoreError(ContractSlideError):
    """Raised when the memo store cannot be read or written."""


class CorruptMemoFileError(MemoStoreError):
    """Raised when a memo file has a bad magic, version, checksum or length."""


class MemoMissError(MemoStoreError):
    """Raised when a node marked clean has no memo entry (cache coherence failure)."""


@dataclass(frozen=True, slots=True)
class MemoEntry:
    task_id: TaskId
    output: bytes
    run_epoch: int


@dataclass(frozen=True, slots=True)
class StoreStats:
    entries: int
    bytes: int
    hits: int
    misses: int
    puts: int


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    chunk_id: int
    record_count: int
    content_fp: Fingerprint
    slot: int | None = None


@dataclass(frozen=True, slots=True)
class AccumulatorEntry:
    """Folded value of one key in append-only mode."""

    key: bytes
    pairs: int
    value: bytes


@dataclass(slots=True)
class EngineSnapshot:
    """Engine state persisted next to the memo entries."""

    job_fp: Fingerprint | None = None
    next_chunk_id: int = 0
    ledger: list[LedgerEntry] = field(default_factory=list)
    accumulators: list[AccumulatorEntry] = field(default_factory=list)


class MemoStore:
    def __init__(self) -> None:
        self._entries: dict[TaskId, MemoEntry] = {}
        self._reached: set[TaskId] = set()
        self._inserted: set[TaskId] = set()
        self._epoch = 0
        self._hits = 0
        self._misses = 0
        self._puts = 0
        self._lock = threading.Lock()
        self.snapshot = EngineSnapshot()

    @property
    def epoch(self) -> int:
        return self._epoch

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, task_id: TaskId) -> bool:
        return task_id in self._entries

    def begin_run(self) -> int:
        with self._lock:
            self._epoch += 1
            self._reached.clear()
            self._inserted.clear()
            self._hits = self._misses = self._puts = 0
            return self._epoch

    def get(self, task_id: TaskId) -> MemoEntry | None:
        with self._lock:
            entry = self._entries.get(task_id)
            if entry is None:
                self._misses += 1
                return None
            self._reached.add(task_id)
            self._hits += 1
            return entry

    def put(self, task_id: TaskId, output: bytes) -> MemoEntry:
        with self._lock:
            existing = self._entries.get(task_id)
            self._reached.add(task_id)
            if existing is not None and existing.output == output:
                return existing
            if existing is None:
                self._inserted.add(task_id)
            entry = MemoEntry(task_id=task_id, output=bytes(output), run_epoch=self._epoch)
            self._entries[task_id] = entry
            self._puts += 1
            return entry

    def end_run_evict(self) -> int:
        with self._lock:
            stale = [task_id for task_id in self._entries if task_id not in self._reached]
            for task_id in stale:
                del self._entries[task_id]
            self._inserted.clear()
        if stale:
            log.info("memo_evicted", evicted=len(stale), entries=len(self._entries), epoch=self._epoch)
        return len(stale)

    def abort_run(self) -> int:
        """Drop entries created by a failed run and step back to the previous epoch."""
        with self._lock:
            dropped = len(self._inserted)
            for task_id in self._inserted:
                self._entries.pop(task_id, None)
            self._inserted.clear()
            self._reached.clear()
            self._epoch = max(0, self._epoch - 1)
            return dropped

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(
                entries=len(self._entries),
                bytes=sum(len(entry.output) for entry in self._entries.values()),
                hits=self._hits,
                misses=self._misses,
                puts=self._puts,
            )

    def entries(self) -> list[MemoEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=_entry_order)

    def persist(self, path: Path | str) -> Path:
        target = Path(path)
        payload = self._serialise()
        tmp = target.with_name(target.name + ".tmp")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(payload)
            os.replace(tmp, target)
        except OSError as exc:
            raise MemoStoreError(f"cannot write memo file {target}: {exc}") from exc
        log.info("memo_persisted", path=target, entries=len(self._entries), bytes=len(payload))
        return target

    @classmethod
    def load(cls, path: Path | str) -> MemoStore:
        source = Path(path)
        try:
            raw = source.read_bytes()
        except OSError as exc:
            raise MemoStoreError(f"cannot read memo file {source}: {exc}") from exc
        store = cls()
        entries, snapshot = _parse(raw)
        store._entries = {entry.task_id: entry for entry in entries}
        store.snapshot = snapshot
        log.info("memo_loaded", path=source, entries=len(entries), chunks=len(snapshot.ledger))
        return store

    def _serialise(self) -> bytes:
        with self._lock:
            ordered = sorted(self._entries.values(), key=_entry_order)
            parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(ordered))]
            for entry in ordered:
                body = _ENTRY_HEAD.pack(
                    int(entry.task_id.kind),
                    entry.task_id.fn_id.digest,
                    entry.task_id.input_fp.digest,
                    len(entry.output),
                ) + entry.output
                parts.append(body)
                parts.append(hashlib.sha256(body).digest())
            parts.append(_serialise_ledger(self.snapshot))
        return b"".join(parts)


def _entry_order(entry: MemoEntry) -> tuple[int, bytes, bytes]:
    task_id = entry.task_id
    return int(task_id.kind), task_id.fn_id.digest, task_id.input_fp.digest


def _serialise_ledger(snapshot: EngineSnapshot) -> bytes:
    job = snapshot.job_fp.digest if snapshot.job_fp else bytes(FINGERPRINT_SIZE)
    rows = [
        _LEDGER_HEAD.pack(
            1 if snapshot.job_fp else 0, job, snapshot.next_chunk_id, len(snapshot.ledger)
        )
    ]
    for row in snapshot.ledger:
        slot = NO_SLOT if row.slot is None else row.slot
        rows.append(_LEDGER_ROW.pack(row.chunk_id, row.record_count, slot, row.content_fp.digest))
    rows.append(_COUNT.pack(len(snapshot.accumulators)))
    for acc in snapshot.accumulators:
        rows.append(_ACC_KEY.pack(len(acc.key)) + acc.key)
        rows.append(_ACC_BODY.pack(acc.pairs, len(acc.value)) + acc.value)
    payload = b"".join(rows)
    return _SECTION_HEAD.pack(LEDGER_MAGIC, len(payload)) + payload + hashlib.sha256(payload).digest()


class _Cursor:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.raw):
            raise CorruptMemoFileError(f"memo file truncated while reading {what}")
        chunk = self.raw[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, layout: struct.Struct, what: str) -> tuple:
        return layout.unpack(self.take(layout.size, what))


def _parse(raw: bytes) -> tuple[list[MemoEntry], EngineSnapshot]:
    cursor = _Cursor(raw)
    magic, version, count = cursor.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise CorruptMemoFileError("bad memo file magic")
    if version != FORMAT_VERSION:
        raise CorruptMemoFileError(f"unsupported memo file version {version}")

    entries: list[MemoEntry] = []
    for index in range(count):
        start = cursor.offset
        kind, fn_id, input_fp, size = cursor.unpack(_ENTRY_HEAD, f"entry {index}")
        output = cursor.take(size, f"entry {index} output")
        checksum = cursor.take(FINGERPRINT_SIZE, f"entry {index} checksum")
        if hashlib.sha256(raw[start:cursor.offset - FINGERPRINT_SIZE]).digest() != checksum:
            raise CorruptMemoFileError(f"checksum mismatch in entry {index}")
        try:
            task_kind = TaskKind(kind)
        except ValueError as exc:
            raise CorruptMemoFileError(f"unknown task kind {kind} in entry {index}") from exc
        task_id = TaskId(task_kind, Fingerprint(fn_id), Fingerprint(input_fp))
        entries.append(MemoEntry(task_id=task_id, output=output, run_epoch=0))

    snapshot = _parse_ledger(cursor)
    if cursor.offset != len(raw):
        raise CorruptMemoFileError("trailing bytes after ledger section")
    return entries, snapshot


def _parse_ledger(cursor: _Cursor) -> EngineSnapshot:
    magic, size = cursor.unpack(_SECTION_HEAD, "ledger header")
    if magic != LEDGER_MAGIC:
        raise CorruptMemoFileError("bad ledger section magic")
    payload = cursor.take(size, "ledger payload")
    checksum = cursor.take(FINGERPRINT_SIZE, "ledger checksum")
    if hashlib.sha256(payload).digest() != checksum:
        raise CorruptMemoFileError("checksum mismatch in ledger section")

    inner = _Cursor(payload)
    has_job, job, next_chunk_id, count = inner.unpack(_LEDGER_HEAD, "ledger fields")
    ledger = []
    for index in range(count):
        chunk_id, record_count, slot, content_fp = inner.unpack(_LEDGER_ROW, f"ledger row {index}")
        ledger.append(
            LedgerEntry(
                chunk_id=chunk_id,
                record_count=record_count,
                content_fp=Fingerprint(content_fp),
                slot=None if slot == NO_SLOT else slot,
            )
        )
    accumulators = []
    (acc_count,) = inner.unpack(_COUNT, "accumulator count")
    for index in range(acc_count):
        (key_size,) = inner.unpack(_ACC_KEY, f"accumulator {index} key length")
        key = inner.take(key_size, f"accumulator {index} key")
        pairs, value_size = inner.unpack(_ACC_BODY, f"accumulator {index} header")
        value = inner.take(value_size, f"accumulator {index} value")
        accumulators.append(AccumulatorEntry(key=key, pairs=pairs, value=value))
    if inner.offset != len(payload):
        raise CorruptMemoFileError("ledger payload length mismatch")
    return EngineSnapshot(
        job_fp=Fingerprint(job) if has_job else None,
        next_chunk_id=next_chunk_id,
        ledger=ledger,
        accumulators=accumulators,
    )
