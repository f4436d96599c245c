"""Canonical `key=value` text used by config files and checkpoint headers."""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_key_values(values: Mapping[str, Any]) -> str:
    """One `key=value` line per entry, keys sorted, trailing newline."""
    return "".join(f"{key}={format_value(values[key])}\n" for key in sorted(values))


def parse_key_values(text: str) -> dict[str, str]:
    """Parse `key=value` lines; blank lines and `#` comments are skipped.

    Raises ValueError naming the 1-based line on malformed or duplicate keys.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out
