from __future__ import annotations

import pytest
from pydantic import ValidationError

from contract_slide.core.config import MAX_TREE_SEED, Settings


def test_environment_overrides_defaults(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("CONTRACT_SLIDE_WORKERS", "3")
    monkeypatch.setenv("CONTRACT_SLIDE_TREE_SEED", "42")
    monkeypatch.setenv("CONTRACT_SLIDE_MEMO_PATH", "")

    settings = Settings(_env_file=None)

    assert settings.workers == 3
    assert settings.tree_seed == 42
    assert settings.memo_path is None
    assert settings.strict_memo is True


@pytest.mark.parametrize(
    ("variable", "value"),
    [
        ("CONTRACT_SLIDE_WORKERS", "0"),
        ("CONTRACT_SLIDE_SPLIT_SIZE", "-1"),
        ("CONTRACT_SLIDE_TREE_SEED", str(MAX_TREE_SEED)),
    ],
)
def test_out_of_range_values_are_rejected(monkeypatch: pytest.MonkeyPatch, variable: str, value: str) -> None:
    monkeypatch.setenv(variable, value)

    with pytest.raises(ValidationError):
        Settings(_env_file=None)
