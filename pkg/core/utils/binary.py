"""Bounds-checked byte cursor and SMF variable-length quantities."""

from __future__ import annotations

import struct
from typing import Callable

from core.errors import MstError

ErrorFactory = Callable[..., MstError]


class ByteReader:
    """Cursor over an immutable byte buffer.

    Every short read raises the error produced by `on_short` so callers decide
    which typed failure a truncation maps to (TruncatedTrack, CorruptRecord, ...).
    """

    def __init__(self, data: bytes, on_short: ErrorFactory, *, start: int = 0, end: int | None = None) -> None:
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else min(end, len(data))
        self._on_short = on_short

    @property
    def remaining(self) -> int:
        return self.end - self.pos

    def at_end(self) -> bool:
        return self.pos >= self.end

    def take(self, n: int, what: str = "bytes") -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise self._on_short(f"need {n} {what}, {max(0, self.remaining)} left", offset=self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1, "byte")[0]

    def peek_u8(self) -> int:
        if self.pos >= self.end:
            raise self._on_short("need 1 byte, 0 left", offset=self.pos)
        return self.data[self.pos]

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, f"bytes for '{fmt}'"))

    def varlen(self, on_overflow: ErrorFactory) -> int:
        """Read an SMF variable-length quantity (at most 4 bytes)."""
        start = self.pos
        value = 0
        for _ in range(4):
            byte = self.u8()
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise on_overflow("variable-length quantity longer than 4 bytes", offset=start)


def encode_varlen(value: int) -> bytes:
    if value < 0 or value > 0x0FFFFFFF:
        raise ValueError(f"value {value} out of variable-length range")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))
