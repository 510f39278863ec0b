import logging
import sys
from pathlib import Path
from typing import Any, TextIO

import orjson
import structlog
from structlog.stdlib import BoundLogger


def _resolve_level(level_name: str) -> int:
    normalized = level_name.upper()
    if normalized not in logging.getLevelNamesMapping():
        return logging.INFO
    resolved = logging.getLevelName(normalized)
    return resolved if isinstance(resolved, int) else logging.INFO


def _render_default(obj: Any) -> Any:
    # Keys, fingerprints and task ids show up in event context constantly.
    if isinstance(obj, (bytes, bytearray)):
        try:
            return bytes(obj).decode("utf-8")
        except UnicodeDecodeError:
            return bytes(obj).hex()
    if isinstance(obj, Path):
        return str(obj)
    short = getattr(obj, "short", None)
    if callable(short):
        return short()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _orjson_dumps(obj: Any, *, default: Any | None = None, option: int | None = None, **_: Any) -> str:
    options = orjson.OPT_NON_STR_KEYS if option is None else option | orjson.OPT_NON_STR_KEYS
    return orjson.dumps(obj, default=default or _render_default, option=options).decode()


def configure_logging(level_name: str, *, stream: TextIO | None = None) -> None:
    """Emit structlog events as JSON lines. Reports own stdout, so logs default to stderr."""
    level = _resolve_level(level_name)

    logging.basicConfig(level=level, format="%(message)s", stream=stream or sys.stderr, force=True)

    structlog.configure(
        processors=[
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(serializer=_orjson_dumps),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def get_logger(*args: Any, **kwargs: Any) -> BoundLogger:
    return structlog.get_logger(*args, **kwargs)
