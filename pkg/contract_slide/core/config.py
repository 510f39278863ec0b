from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

MAX_TREE_SEED = 2**64


def _default_workers() -> int:
    return os.cpu_count() or 1


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    log_level: str = Field("INFO", alias="CONTRACT_SLIDE_LOG_LEVEL")

    workers: int = Field(
        default_factory=_default_workers,
        alias="CONTRACT_SLIDE_WORKERS",
        description="Width of the engine worker pool (1 for determinism audits).",
    )
    memo_path: Path | None = Field(
        None,
        alias="CONTRACT_SLIDE_MEMO_PATH",
        description="Memo file to load before and persist after each run; unset keeps the store in memory.",
    )
    tree_seed: int = Field(
        0,
        alias="CONTRACT_SLIDE_TREE_SEED",
        description="Salt for the variable-width contraction coins.",
    )
    split_size: int = Field(
        1,
        alias="CONTRACT_SLIDE_SPLIT_SIZE",
        description="Minimum number of records grouped into one Map split.",
    )
    strict_memo: bool = Field(
        True,
        alias="CONTRACT_SLIDE_STRICT_MEMO",
        description="Treat a memo miss on a clean tree node as an error instead of recomputing.",
    )
    histogram_bucket_width: int = Field(
        5,
        alias="CONTRACT_SLIDE_HISTOGRAM_BUCKET_WIDTH",
        description="Width of the value ranges used by the histogram workload.",
    )
    words_per_record: int = Field(
        4,
        alias="CONTRACT_SLIDE_WORDS_PER_RECORD",
        description="Tokens per generated wordcount record.",
    )
    chunk_records: int = Field(
        8,
        alias="CONTRACT_SLIDE_CHUNK_RECORDS",
        description="Records per generated input chunk.",
    )

    @field_validator("workers", "split_size", "histogram_bucket_width", "words_per_record", "chunk_records")
    @classmethod
    def ensure_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("tree_seed")
    @classmethod
    def ensure_u64(cls, value: int) -> int:
        if not 0 <= value < MAX_TREE_SEED:
            raise ValueError("tree seed must fit in 64 bits")
        return value

    @field_validator("memo_path", mode="before")
    @classmethod
    def empty_path_is_none(cls, value: str | Path | None) -> str | Path | None:
        if isinstance(value, str) and not value.strip():
            return None
        return value


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
