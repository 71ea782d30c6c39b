"""JSON log formatting with a context-local set of structured fields.

Nothing is configured on import; the CLI and the evaluation script call
:func:`setup_logging` explicitly. Services log with ``extra={"context": {...}}``
and wrap runs in :func:`logging_context` so every record of a run carries its
run-level fields.
"""
from __future__ import annotations

import contextlib
import contextvars
import json
import logging
import sys
import time
from typing import Any, Dict, Iterator, Optional

__all__ = [
    "JsonFormatter",
    "setup_logging",
    "get_logger",
    "logging_context",
]

_LOG_CONTEXT: contextvars.ContextVar[Dict[str, Any]] = contextvars.ContextVar(
    "sati_log_context", default={}
)


class JsonFormatter(logging.Formatter):
    """One JSON object per record; bound fields first, then the record's own ``context``."""

    def format(self, record: logging.LogRecord) -> str:     # noqa: D401
        base: Dict[str, Any] = {
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(record.created))
            + f".{int(record.msecs):03d}Z",
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            base["exc_info"] = self.formatException(record.exc_info)
        context = dict(_LOG_CONTEXT.get())
        context.update(getattr(record, "context", {}))
        if context:
            base["context"] = context
        return json.dumps(base, ensure_ascii=False, default=str)


def setup_logging(*, level: Optional[str] = None, use_json: bool = True) -> None:
    """Configure root logging for a CLI run.

    :param level:
            Log level name, ``INFO`` when not provided.
    :param use_json:
            When ``True`` (default) installs :class:`JsonFormatter`.
            Set to ``False`` for a plain single-line format during local debugging.
    """

    formatter: logging.Formatter
    if use_json:
        formatter = JsonFormatter()
    else:
        formatter = logging.Formatter(
            "%(asctime)s | %(levelname)s | %(name)s | %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.addHandler(handler)
    root_logger.setLevel((level or "INFO").upper())


def get_logger(name: str | None = None) -> logging.Logger:
    return logging.getLogger(name)


@contextlib.contextmanager
def logging_context(**kwargs: Any) -> Iterator[None]:
    """Bind the non-``None`` keyword arguments to every record logged inside the block."""

    current = dict(_LOG_CONTEXT.get())
    current.update({k: v for k, v in kwargs.items() if v is not None})
    token = _LOG_CONTEXT.set(current)
    try:
        yield
    finally:
        _LOG_CONTEXT.reset(token)
