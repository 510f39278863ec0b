from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from contract_slide.core.enums import TaskKind

FINGERPRINT_SIZE = 32


@dataclass(frozen=True, slots=True)
class Record:
    data: bytes

    def __post_init__(self) -> None:
        if not self.data:
            raise ValueError("record bytes must be non-empty")

    @classmethod
    def of(cls, text: str | bytes) -> Record:
        return cls(text.encode("utf-8") if isinstance(text, str) else text)


@dataclass(frozen=True, slots=True)
class Chunk:
    id: int
    records: tuple[Record, ...]

    def __post_init__(self) -> None:
        if not 0 <= self.id < 2**64:
            raise ValueError("chunk id must fit in 64 bits")

    @classmethod
    def of(cls, chunk_id: int, lines: Sequence[str | bytes]) -> Chunk:
        return cls(chunk_id, tuple(Record.of(line) for line in lines))


@dataclass(frozen=True, slots=True, order=True)
class KVPair:
    key: bytes
    value: bytes

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("key must be non-empty")


@dataclass(frozen=True, slots=True, order=True)
class Fingerprint:
    digest: bytes

    def __post_init__(self) -> None:
        if len(self.digest) != FINGERPRINT_SIZE:
            raise ValueError(f"fingerprint must be {FINGERPRINT_SIZE} bytes")

    def hex(self) -> str:
        return self.digest.hex()

    def short(self) -> str:
        return self.digest[:6].hex()


@dataclass(frozen=True, slots=True)
class Partial:
    """Ordered value list held by a contraction-tree node for one key."""

    values: tuple[bytes, ...] = ()

    def __len__(self) -> int:
        return len(self.values)

    def concat(self, other: Partial) -> Partial:
        return Partial(self.values + other.values)


@dataclass(frozen=True, slots=True)
class KeyedValues:
    """Input of a Combine or Reduce task."""

    key: bytes
    values: tuple[bytes, ...]


@dataclass(frozen=True, slots=True)
class RecordList:
    """Input of a Map task before chunk digests are known, and a chunk's content."""

    records: tuple[Record, ...]


@dataclass(frozen=True, slots=True)
class FingerprintList:
    """Merkle-style digest input: the ordered content fingerprints of a split's chunks."""

    items: tuple[Fingerprint, ...]


@dataclass(frozen=True, slots=True)
class TaskId:
    kind: TaskKind
    fn_id: Fingerprint
    input_fp: Fingerprint

    def short(self) -> str:
        return f"{self.kind.name.lower()}:{self.input_fp.short()}"


@dataclass(slots=True)
class RunStats:
    n_i: int = 0
    n_m: int = 0
    n_mk: int = 0
    n_o: int = 0
    map_run: int = 0
    map_hit: int = 0
    combine_run: int = 0
    combine_hit: int = 0
    reduce_run: int = 0
    reduce_hit: int = 0
    combine_stages: int = 0
    max_depth: int = 0
    monotonic_violations: int = 0

    @property
    def map_tasks(self) -> int:
        return self.map_run + self.map_hit

    @property
    def reduce_tasks(self) -> int:
        return self.reduce_run + self.reduce_hit

    @property
    def total_tasks(self) -> int:
        return self.map_tasks + self.combine_stages + self.reduce_tasks

    @property
    def fresh_tasks(self) -> int:
        return self.map_run + self.combine_run + self.reduce_run

    def check(self) -> None:
        counts = (
            self.n_i, self.n_m, self.n_mk, self.n_o,
            self.map_run, self.map_hit, self.combine_run, self.combine_hit,
            self.reduce_run, self.reduce_hit, self.combine_stages,
        )
        if any(value < 0 for value in counts):
            raise ValueError("run counters must be non-negative")
        if self.n_mk > self.n_m:
            raise ValueError("distinct keys cannot exceed emitted pairs")
        if self.combine_run + self.combine_hit != self.combine_stages:
            raise ValueError("every combine node must be either executed or served from memo")

    def as_row(self) -> dict[str, int]:
        return {
            "n_i": self.n_i,
            "n_m": self.n_m,
            "n_mk": self.n_mk,
            "n_o": self.n_o,
            "N_M": self.map_tasks,
            "N_C": self.combine_stages,
            "N_R": self.reduce_tasks,
            "fresh_map": self.map_run,
            "fresh_combine": self.combine_run,
            "fresh_reduce": self.reduce_run,
            "hit_map": self.map_hit,
            "hit_combine": self.combine_hit,
            "hit_reduce": self.reduce_hit,
            "max_depth": self.max_depth,
            "monotonic_violations": self.monotonic_violations,
        }


@dataclass(frozen=True, slots=True)
class FreshTask:
    kind: TaskKind
    task: str
    seconds: float


@dataclass(slots=True)
class FreshReport:
    tasks: list[FreshTask] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return sum(task.seconds for task in self.tasks)
