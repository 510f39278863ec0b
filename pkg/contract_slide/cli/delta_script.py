"""Delta scripts and seeded input generators for the command-line harness.

A script holds one command per line; ``---`` closes the current delta::

    append ["a b", "c d"]
    replace 3 gen count=4 seed=9
    delete 5
    slide gen count=8 seed=1 alphabet=32
    ---
    append ["e f"]

Payloads are either a JSON array of record strings or a ``gen`` directive.
Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import orjson

from contract_slide.core.enums import DeltaKind, TreeVariant, WorkloadName
from contract_slide.core.errors import ContractSlideError
from contract_slide.core.model import Chunk, Record
from contract_slide.services.contraction_tree import TreeMode
from contract_slide.services.engine import (
    AppendChunk,
    DeleteChunk,
    DeltaOp,
    ModeViolationError,
    ReplaceChunk,
    SlideBucket,
    UpdateDelta,
)

DELTA_SEPARATOR = "---"


class DeltaScriptError(ContractSlideError):
    """Raised when a delta script cannot be parsed or resolved."""


@dataclass(frozen=True, slots=True)
class GenerateDirective:
    count: int
    seed: int
    alphabet: int | None = None


@dataclass(frozen=True, slots=True)
class ScriptOp:
    kind: DeltaKind
    chunk_id: int | None = None
    payload: tuple[str, ...] | GenerateDirective | None = None
    line: int = 0


@dataclass(slots=True)
class DeltaScript:
    deltas: list[list[ScriptOp]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.deltas)


@dataclass(frozen=True, slots=True)
class RecordGenerator:
    """Seeded record streams over a bounded alphabet, so the distinct key count stays controllable."""

    workload: WorkloadName
    alphabet: int = 16
    words_per_record: int = 4

    def records(self, count: int, seed: int, *, alphabet: int | None = None) -> tuple[Record, ...]:
        size = alphabet or self.alphabet
        if count < 0 or size < 1:
            raise DeltaScriptError("generator needs count >= 0 and alphabet >= 1")
        rng = np.random.default_rng(seed)
        if self.workload is WorkloadName.WORDCOUNT:
            tokens = rng.integers(0, size, size=(count, self.words_per_record))
            return tuple(Record.of(" ".join(f"w{token}" for token in row)) for row in tokens)
        values = rng.integers(0, size, size=count)
        return tuple(Record.of(str(value)) for value in values)

    def chunks(self, records: int, seed: int, chunk_records: int) -> list[Chunk]:
        stream = self.records(records, seed)
        return [
            Chunk(index, stream[start:start + chunk_records])
            for index, start in enumerate(range(0, len(stream), chunk_records))
        ]


def _parse_payload(text: str, line: int) -> tuple[str, ...] | GenerateDirective:
    if text.startswith("gen"):
        return _parse_directive(text[3:], line)
    try:
        raw = orjson.loads(text)
    except orjson.JSONDecodeError as exc:
        raise DeltaScriptError(f"line {line}: payload is not valid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DeltaScriptError(f"line {line}: payload must be a non-empty JSON array")
    records = []
    for item in raw:
        if isinstance(item, bool) or not isinstance(item, (str, int)):
            raise DeltaScriptError(f"line {line}: records must be strings or integers")
        text_item = str(item)
        if not text_item:
            raise DeltaScriptError(f"line {line}: records must be non-empty")
        records.append(text_item)
    return tuple(records)


def _parse_directive(text: str, line: int) -> GenerateDirective:
    fields: dict[str, int] = {}
    for part in text.split():
        name, sep, value = part.partition("=")
        if not sep or name not in {"count", "seed", "alphabet"}:
            raise DeltaScriptError(f"line {line}: unknown generator argument {part!r}")
        try:
            fields[name] = int(value)
        except ValueError as exc:
            raise DeltaScriptError(f"line {line}: {name} must be an integer") from exc
    if "count" not in fields or "seed" not in fields:
        raise DeltaScriptError(f"line {line}: gen needs count= and seed=")
    if fields["count"] < 1:
        raise DeltaScriptError(f"line {line}: gen count must be at least 1")
    return GenerateDirective(fields["count"], fields["seed"], fields.get("alphabet"))


def _parse_chunk_id(text: str, line: int) -> int:
    try:
        chunk_id = int(text)
    except ValueError as exc:
        raise DeltaScriptError(f"line {line}: chunk id {text!r} is not an integer") from exc
    if chunk_id < 0:
        raise DeltaScriptError(f"line {line}: chunk id must be non-negative")
    return chunk_id


def parse_delta_script(text: str) -> DeltaScript:
    script = DeltaScript()
    current: list[ScriptOp] = []
    open_delta = False
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line == DELTA_SEPARATOR:
            script.deltas.append(current)
            current, open_delta = [], False
            continue

        verb, _, rest = line.partition(" ")
        try:
            kind = DeltaKind(verb)
        except ValueError as exc:
            raise DeltaScriptError(f"line {number}: unknown command {verb!r}") from exc
        rest = rest.strip()
        open_delta = True
        match kind:
            case DeltaKind.APPEND | DeltaKind.SLIDE:
                current.append(ScriptOp(kind, payload=_parse_payload(rest, number), line=number))
            case DeltaKind.REPLACE:
                chunk_text, _, payload = rest.partition(" ")
                current.append(
                    ScriptOp(
                        kind,
                        chunk_id=_parse_chunk_id(chunk_text, number),
                        payload=_parse_payload(payload.strip(), number),
                        line=number,
                    )
                )
            case DeltaKind.DELETE:
                current.append(ScriptOp(kind, chunk_id=_parse_chunk_id(rest, number), line=number))
    if open_delta:
        script.deltas.append(current)
    return script


def load_delta_script(path: Path | str) -> DeltaScript:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DeltaScriptError(f"cannot read delta script {path}: {exc}") from exc
    return parse_delta_script(text)


def resolve_script(script: DeltaScript, generator: RecordGenerator) -> list[UpdateDelta]:
    deltas = []
    for ops in script.deltas:
        resolved: list[DeltaOp] = []
        for op in ops:
            records = _records(op.payload, generator)
            match op.kind:
                case DeltaKind.APPEND:
                    resolved.append(AppendChunk(records))
                case DeltaKind.SLIDE:
                    resolved.append(SlideBucket(records))
                case DeltaKind.REPLACE:
                    resolved.append(ReplaceChunk(op.chunk_id, records))
                case DeltaKind.DELETE:
                    resolved.append(DeleteChunk(op.chunk_id))
        deltas.append(UpdateDelta(tuple(resolved)))
    return deltas


def _records(
    payload: tuple[str, ...] | GenerateDirective | None,
    generator: RecordGenerator,
) -> tuple[Record, ...]:
    if payload is None:
        return ()
    if isinstance(payload, GenerateDirective):
        return generator.records(payload.count, payload.seed, alphabet=payload.alphabet)
    return tuple(Record.of(item) for item in payload)


class LogicalInput:
    """Replays deltas on a plain chunk list; the oracle's view of the current input."""

    def __init__(self, chunks: Sequence[Chunk], mode: TreeMode) -> None:
        self.mode = mode
        self.chunks = list(chunks)
        self.next_chunk_id = max((chunk.id for chunk in chunks), default=-1) + 1

    @property
    def chunk_ids(self) -> list[int]:
        return [chunk.id for chunk in self.chunks]

    def apply(self, delta: UpdateDelta) -> None:
        variant = self.mode.variant
        for op in delta.ops:
            match op:
                case SlideBucket() if variant is not TreeVariant.FIXED:
                    raise ModeViolationError(f"slide is only valid for fixed-width windows, not {self.mode}")
                case ReplaceChunk() | DeleteChunk() if variant is TreeVariant.APPEND:
                    raise ModeViolationError("append-only input rejects replace and delete")
                case AppendChunk(records=records) if variant is not TreeVariant.FIXED:
                    self._push(records)
                case AppendChunk(records=records) | SlideBucket(records=records):
                    if len(self.chunks) >= (self.mode.bucket_count or 0):
                        self.chunks.pop(0)
                    self._push(records)
                case ReplaceChunk(chunk_id=chunk_id, records=records):
                    self.chunks[self._index(chunk_id)] = Chunk(chunk_id, tuple(records))
                case DeleteChunk(chunk_id=chunk_id):
                    self.chunks.pop(self._index(chunk_id))

    def _push(self, records: Sequence[Record]) -> None:
        self.chunks.append(Chunk(self.next_chunk_id, tuple(records)))
        self.next_chunk_id += 1

    def _index(self, chunk_id: int) -> int:
        for index, chunk in enumerate(self.chunks):
            if chunk.id == chunk_id:
                return index
        raise DeltaScriptError(f"chunk {chunk_id} is not part of the replayed input")


def random_deltas(
    generator: RecordGenerator,
    logical: LogicalInput,
    count: int,
    seed: int,
    *,
    chunk_records: int,
) -> list[UpdateDelta]:
    """Seeded mode-valid delta sequence; ``logical`` is left unchanged."""
    shadow = LogicalInput(logical.chunks, logical.mode)
    shadow.next_chunk_id = logical.next_chunk_id
    rng = np.random.default_rng(seed)
    variant = logical.mode.variant
    deltas = []
    for step in range(count):
        record_seed = int(rng.integers(0, 2**32)) ^ step
        records = generator.records(int(rng.integers(1, chunk_records + 1)), record_seed)
        roll = int(rng.integers(0, 3))
        if variant is TreeVariant.APPEND or not shadow.chunks:
            op: DeltaOp = AppendChunk(records)
        elif variant is TreeVariant.FIXED:
            op = SlideBucket(records) if roll else ReplaceChunk(_pick(rng, shadow), records)
        elif roll == 0:
            op = AppendChunk(records)
        elif roll == 1 and len(shadow.chunks) > 1:
            op = DeleteChunk(_pick(rng, shadow))
        else:
            op = ReplaceChunk(_pick(rng, shadow), records)
        delta = UpdateDelta.of(op)
        shadow.apply(delta)
        deltas.append(delta)
    return deltas


def _pick(rng: np.random.Generator, logical: LogicalInput) -> int:
    return logical.chunks[int(rng.integers(0, len(logical.chunks)))].id
