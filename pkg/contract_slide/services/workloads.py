from __future__ import annotations

from typing import Callable

from contract_slide.core.config import get_settings
from contract_slide.core.enums import WorkloadName
from contract_slide.core.model import KVPair, Record
from contract_slide.services.udf import (
    CombineFn,
    MapFn,
    ReduceFn,
    UnknownWorkloadError,
    Workload,
)

SUM_KEY = b"sum"
WORKLOAD_VERSION = "1"


def _as_int(raw: bytes) -> int:
    return int(raw.decode("ascii").strip())


def _sum_values(_key: bytes, values: list[bytes]) -> list[bytes]:
    # The empty list is the identity partial and must stay empty.
    if not values:
        return []
    return [str(sum(_as_int(value) for value in values)).encode("ascii")]


def _sum_reduce(key: bytes, values: list[bytes]) -> list[KVPair]:
    total = sum(_as_int(value) for value in values)
    return [KVPair(key, str(total).encode("ascii"))]


def _sum_combine(name: str) -> CombineFn:
    return CombineFn(
        name=f"{name}.combine",
        version=WORKLOAD_VERSION,
        apply=_sum_values,
        monotonic=True,
        commutative=True,
        has_identity=True,
    )


def _wordcount_map(record: Record) -> list[KVPair]:
    return [KVPair(token, b"1") for token in record.data.split()]


def _windowed_sum_map(record: Record) -> list[KVPair]:
    return [KVPair(SUM_KEY, str(_as_int(record.data)).encode("ascii"))]


def bucket_label(value: int, width: int) -> bytes:
    low = (value // width) * width
    return f"{low}-{low + width - 1}".encode("ascii")


def _histogram_map(width: int) -> Callable[[Record], list[KVPair]]:
    def apply(record: Record) -> list[KVPair]:
        return [KVPair(bucket_label(_as_int(record.data), width), b"1")]

    return apply


def builtin_workload(name: WorkloadName | str, *, bucket_width: int | None = None) -> Workload:
    try:
        workload = WorkloadName(name)
    except ValueError as exc:
        raise UnknownWorkloadError(f"unknown workload {name!r}") from exc

    match workload:
        case WorkloadName.WORDCOUNT:
            map_fn = MapFn("wordcount.map", WORKLOAD_VERSION, _wordcount_map)
        case WorkloadName.WINDOWED_SUM:
            map_fn = MapFn("windowed_sum.map", WORKLOAD_VERSION, _windowed_sum_map)
        case WorkloadName.HISTOGRAM:
            width = bucket_width or get_settings().histogram_bucket_width
            # Width is part of the map identity.
            map_fn = MapFn("histogram.map", f"{WORKLOAD_VERSION}/w{width}", _histogram_map(width))

    return Workload(
        map_fn=map_fn,
        combine_fn=_sum_combine(workload.value),
        reduce_fn=ReduceFn(f"{workload.value}.reduce", WORKLOAD_VERSION, _sum_reduce),
    )
