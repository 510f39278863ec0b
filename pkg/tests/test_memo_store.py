from __future__ import annotations

from pathlib import Path

import pytest

from contract_slide.core.encoding import fingerprint
from contract_slide.core.enums import TaskKind
from contract_slide.core.model import TaskId
from contract_slide.infrastructure.memo_store import (
    AccumulatorEntry,
    CorruptMemoFileError,
    EngineSnapshot,
    LedgerEntry,
    MemoStore,
    MemoStoreError,
)


def _task(kind: TaskKind, name: bytes) -> TaskId:
    return TaskId(kind, fingerprint(b"fn"), fingerprint(name))


def _filled_store() -> MemoStore:
    store = MemoStore()
    store.begin_run()
    store.put(_task(TaskKind.MAP, b"split-0"), b"\x03\x00\x00\x00\x00")
    store.put(_task(TaskKind.COMBINE, b"node"), b"partial")
    store.put(_task(TaskKind.REDUCE, b"root"), b"")
    store.snapshot = EngineSnapshot(
        job_fp=fingerprint(b"job"),
        next_chunk_id=3,
        ledger=[
            LedgerEntry(chunk_id=0, record_count=2, content_fp=fingerprint(b"c0"), slot=1),
            LedgerEntry(chunk_id=2, record_count=5, content_fp=fingerprint(b"c2")),
        ],
    )
    store.end_run_evict()
    return store


def test_accumulators_survive_a_reload(tmp_path: Path) -> None:
    store = _filled_store()
    store.snapshot.accumulators = [
        AccumulatorEntry(key=b"a", pairs=7, value=b"\x05folded"),
        AccumulatorEntry(key=b"", pairs=1, value=b""),
    ]
    path = store.persist(tmp_path / "memo.bin")

    loaded = MemoStore.load(path)

    assert loaded.snapshot.accumulators == store.snapshot.accumulators
    assert loaded.snapshot.ledger == store.snapshot.ledger


def test_get_returns_what_put_stored() -> None:
    store = MemoStore()
    task = _task(TaskKind.COMBINE, b"a")

    assert store.get(task) is None
    store.put(task, b"out")

    entry = store.get(task)
    assert entry is not None
    assert entry.output == b"out"
    assert store.stats().hits == 1
    assert store.stats().misses == 1


def test_put_is_idempotent_for_identical_output() -> None:
    store = MemoStore()
    task = _task(TaskKind.MAP, b"a")

    first = store.put(task, b"out")
    second = store.put(task, b"out")

    assert first is second
    assert store.stats().puts == 1


def test_entries_untouched_by_the_latest_run_are_evicted() -> None:
    store = MemoStore()
    kept, stale = _task(TaskKind.MAP, b"kept"), _task(TaskKind.MAP, b"stale")
    store.begin_run()
    store.put(kept, b"1")
    store.put(stale, b"2")
    store.end_run_evict()

    store.begin_run()
    store.get(kept)
    evicted = store.end_run_evict()

    assert evicted == 1
    assert kept in store
    assert stale not in store


def test_abort_run_drops_entries_of_the_failed_run() -> None:
    store = MemoStore()
    old, new = _task(TaskKind.MAP, b"old"), _task(TaskKind.MAP, b"new")
    store.begin_run()
    store.put(old, b"1")
    store.end_run_evict()
    epoch = store.epoch

    store.begin_run()
    store.put(new, b"2")
    dropped = store.abort_run()

    assert dropped == 1
    assert old in store
    assert new not in store
    assert store.epoch == epoch


def test_persist_and_load_round_trip(tmp_path: Path) -> None:
    store = _filled_store()
    path = store.persist(tmp_path / "memo.bin")

    loaded = MemoStore.load(path)

    assert [entry.task_id for entry in loaded.entries()] == [entry.task_id for entry in store.entries()]
    assert [entry.output for entry in loaded.entries()] == [entry.output for entry in store.entries()]
    assert loaded.snapshot == store.snapshot
    assert not (tmp_path / "memo.bin.tmp").exists()


def test_empty_store_persists_with_an_empty_ledger(tmp_path: Path) -> None:
    path = MemoStore().persist(tmp_path / "empty.bin")

    loaded = MemoStore.load(path)

    assert len(loaded) == 0
    assert loaded.snapshot == EngineSnapshot()


@pytest.mark.parametrize("cut", [1, 10, 40, -33, -1])
def test_truncated_file_is_reported_corrupt(tmp_path: Path, cut: int) -> None:
    path = _filled_store().persist(tmp_path / "memo.bin")
    raw = path.read_bytes()
    path.write_bytes(raw[:cut] if cut > 0 else raw[:len(raw) + cut])

    with pytest.raises(CorruptMemoFileError):
        MemoStore.load(path)


def test_flipped_byte_fails_the_checksum(tmp_path: Path) -> None:
    path = _filled_store().persist(tmp_path / "memo.bin")
    raw = bytearray(path.read_bytes())
    raw[30] ^= 0xFF
    path.write_bytes(bytes(raw))

    with pytest.raises(CorruptMemoFileError):
        MemoStore.load(path)


def test_bad_magic_and_version(tmp_path: Path) -> None:
    path = _filled_store().persist(tmp_path / "memo.bin")
    raw = path.read_bytes()

    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "version.bin").write_bytes(raw[:4] + b"\x00\x00\x00\x09" + raw[8:])

    with pytest.raises(CorruptMemoFileError, match="magic"):
        MemoStore.load(tmp_path / "magic.bin")
    with pytest.raises(CorruptMemoFileError, match="version"):
        MemoStore.load(tmp_path / "version.bin")


def test_missing_file_is_a_store_error(tmp_path: Path) -> None:
    with pytest.raises(MemoStoreError):
        MemoStore.load(tmp_path / "absent.bin")
