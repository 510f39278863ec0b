from __future__ import annotations

from enum import IntEnum, StrEnum


class TaskKind(IntEnum):
    MAP = 1
    COMBINE = 2
    REDUCE = 3


class TreeVariant(StrEnum):
    APPEND = "append"
    FIXED = "fixed"
    VARIABLE = "variable"


class WorkloadName(StrEnum):
    WORDCOUNT = "wordcount"
    WINDOWED_SUM = "windowed_sum"
    HISTOGRAM = "histogram"


class DeltaKind(StrEnum):
    APPEND = "append"
    REPLACE = "replace"
    DELETE = "delete"
    SLIDE = "slide"


class EncodingTag(IntEnum):
    RECORD = 0x01
    KV_PAIR = 0x02
    KV_LIST = 0x03
    PARTIAL = 0x04
    RECORD_LIST = 0x05
    KEYED_VALUES = 0x06
    FINGERPRINT_LIST = 0x07
