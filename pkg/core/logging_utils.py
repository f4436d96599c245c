from __future__ import annotations

import json
import logging
import sys
from contextvars import ContextVar
from typing import Any, Optional

# Extra record attributes copied into structured output when present
_EXTRA_KEYS = ("run_id", "command", "epoch", "batch", "path", "code", "offset", "component", "count")


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:  # type: ignore[override]
        data: dict[str, Any] = {
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            data["exc_info"] = self.formatException(record.exc_info)  # type: ignore[arg-type]
        rid = get_run_id()
        if rid and not hasattr(record, "run_id"):
            data["run_id"] = rid
        for key in _EXTRA_KEYS:
            if hasattr(record, key):
                data[key] = getattr(record, key)
        metrics = getattr(record, "metrics", None)
        if isinstance(metrics, dict):
            data["metrics"] = metrics
        return json.dumps(data, ensure_ascii=False, default=str)


def configure_logging(level: str | int = logging.INFO, *, json_logs: bool = False) -> None:
    """Route all records to stderr, as JSON lines or plain text."""
    root = logging.getLogger()
    root.setLevel(level)
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    # Remove other handlers to avoid duplicate logs
    for h in list(root.handlers):
        root.removeHandler(h)
    root.addHandler(handler)


# Run-scoped context helpers
_RUN_ID: ContextVar[Optional[str]] = ContextVar("run_id", default=None)


def set_run_id(run_id: Optional[str]) -> None:
    _RUN_ID.set(run_id)


def get_run_id() -> Optional[str]:
    return _RUN_ID.get()
