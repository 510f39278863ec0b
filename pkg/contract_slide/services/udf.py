from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from contract_slide.core.encoding import fingerprint_of
from contract_slide.core.enums import TaskKind
from contract_slide.core.errors import ContractSlideError
from contract_slide.core.model import Fingerprint, KeyedValues, KVPair, Record

MapApply = Callable[[Record], list[KVPair]]
CombineApply = Callable[[bytes, list[bytes]], list[bytes]]
ReduceApply = Callable[[bytes, list[bytes]], list[KVPair]]


class WorkloadError(ContractSlideError):
    """Raised when a user-defined function fails; carries the offending input."""

    def __init__(self, message: str, *, kind: TaskKind | None = None, sample: object = None) -> None:
        super().__init__(message)
        self.kind = kind
        self.sample = sample


class UnknownWorkloadError(WorkloadError):
    """Raised when a built-in workload name is not recognised."""


def udf_identity(kind: TaskKind, name: str, version: str) -> Fingerprint:
    """Fingerprint of a registered name and version; code bytes are never hashed."""
    return fingerprint_of(
        KeyedValues(b"udf", (kind.name.encode(), name.encode("utf-8"), version.encode("utf-8")))
    )


@dataclass(frozen=True)
class MapFn:
    name: str
    version: str
    apply: MapApply = field(compare=False)

    @property
    def fn_id(self) -> Fingerprint:
        return udf_identity(TaskKind.MAP, self.name, self.version)

    def __call__(self, record: Record) -> list[KVPair]:
        try:
            return list(self.apply(record))
        except Exception as exc:
            raise WorkloadError(
                f"map function {self.name!r} failed: {exc}", kind=TaskKind.MAP, sample=record
            ) from exc


@dataclass(frozen=True)
class CombineFn:
    """Combine UDF. Must be associative over ordered value lists.

    ``monotonic`` declares ``len(output) <= len(input)``; ``commutative`` and
    ``has_identity`` (the empty list combines away) are required by fixed-width
    windows, whose ring of slots is a rotation of window order.
    """

    name: str
    version: str
    apply: CombineApply = field(compare=False)
    monotonic: bool = True
    commutative: bool = False
    has_identity: bool = False

    @property
    def fn_id(self) -> Fingerprint:
        return udf_identity(TaskKind.COMBINE, self.name, self.version)

    def __call__(self, key: bytes, values: Sequence[bytes]) -> list[bytes]:
        try:
            return list(self.apply(key, list(values)))
        except Exception as exc:
            raise WorkloadError(
                f"combine function {self.name!r} failed: {exc}",
                kind=TaskKind.COMBINE,
                sample=(key, tuple(values)),
            ) from exc


@dataclass(frozen=True)
class ReduceFn:
    name: str
    version: str
    apply: ReduceApply = field(compare=False)

    @property
    def fn_id(self) -> Fingerprint:
        return udf_identity(TaskKind.REDUCE, self.name, self.version)

    def __call__(self, key: bytes, values: Sequence[bytes]) -> list[KVPair]:
        try:
            return list(self.apply(key, list(values)))
        except Exception as exc:
            raise WorkloadError(
                f"reduce function {self.name!r} failed: {exc}",
                kind=TaskKind.REDUCE,
                sample=(key, tuple(values)),
            ) from exc


@dataclass(frozen=True)
class Workload:
    map_fn: MapFn
    combine_fn: CombineFn
    reduce_fn: ReduceFn

    def __iter__(self):
        return iter((self.map_fn, self.combine_fn, self.reduce_fn))


@dataclass(slots=True)
class MonotonicityReport:
    samples_checked: int = 0
    violations: list[tuple[int, int]] = field(default_factory=list)

    @property
    def monotonic(self) -> bool:
        return not self.violations


def check_monotonic(
    combine: CombineFn,
    sample_inputs: Sequence[tuple[bytes, Sequence[bytes]]],
) -> MonotonicityReport:
    if not sample_inputs:
        raise ValueError("at least one sample is required")
    report = MonotonicityReport()
    for key, values in sample_inputs:
        output = combine(key, values)
        report.samples_checked += 1
        if len(output) > len(values):
            report.violations.append((len(values), len(output)))
    return report
