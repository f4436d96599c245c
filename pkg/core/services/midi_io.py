from __future__ import annotations

import logging
import struct
from collections import Counter, defaultdict
from pathlib import Path

from pydantic import ValidationError

from core.errors import (
    BadVarLen,
    InvalidEvent,
    InvariantViolation,
    IoFailure,
    MalformedHeader,
    MidiFormatError,
    SmpteDivision,
    TruncatedTrack,
    UnsupportedFormat,
)
from core.models.midi import (
    EndOfTrack,
    MidiFile,
    NoteOff,
    NoteOn,
    OtherChannel,
    OtherMeta,
    Severity,
    SmfFormat,
    SysEx,
    Tempo,
    TimedEvent,
    TimeSignature,
    Track,
    ValidationIssue,
    ValidationReport,
    event_channel,
)
from core.schema import PERCUSSION_CHANNEL, SMF_HEADER_MAGIC, SMF_TRACK_MAGIC
from core.utils.binary import ByteReader, encode_varlen

logger = logging.getLogger("mst_core.midi_io")

# Data bytes following each channel status nibble
_CHANNEL_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}

META_TEMPO = 0x51
META_TIME_SIGNATURE = 0x58
META_END_OF_TRACK = 0x2F

NoteKey = tuple[int, int, int, int, bool]  # (tick, channel, pitch, velocity, on)


class _TrackParse:
    """Outcome of decoding one MTrk chunk, including lint observations."""

    def __init__(self, track: Track, chunk_offset: int) -> None:
        self.track = track
        self.chunk_offset = chunk_offset
        self.trailing_after_eot: int | None = None  # offset of first byte after EndOfTrack
        self.missing_eot = False


def _decode_meta(meta_type: int, payload: bytes, offset: int):
    if meta_type == META_END_OF_TRACK:
        return EndOfTrack()
    if meta_type == META_TEMPO:
        if len(payload) != 3:
            raise InvalidEvent(f"tempo payload must be 3 bytes, got {len(payload)}", offset=offset)
        value = int.from_bytes(payload, "big")
        if value == 0:
            raise InvalidEvent("tempo of 0 microseconds per quarter", offset=offset)
        return Tempo(us_per_quarter=value)
    if meta_type == META_TIME_SIGNATURE:
        if len(payload) != 4:
            raise InvalidEvent(f"time signature payload must be 4 bytes, got {len(payload)}", offset=offset)
        nn, dd, cc, bb = payload
        if nn == 0:
            raise InvalidEvent("time signature numerator 0", offset=offset)
        return TimeSignature(numerator=nn, denominator=2**dd, clocks_per_click=cc, notated_32nds=bb)
    return OtherMeta(meta_type=meta_type, data=payload)


def _parse_track(data: bytes, start: int, end: int, chunk_offset: int) -> _TrackParse:
    reader = ByteReader(data, TruncatedTrack, start=start, end=end)
    events: list[TimedEvent] = []
    tick = 0
    running: int | None = None
    result: _TrackParse | None = None
    while not reader.at_end():
        tick += reader.varlen(BadVarLen)
        event_offset = reader.pos
        status = reader.peek_u8()
        if status < 0x80:
            if running is None:
                raise InvalidEvent("data byte without running status", offset=event_offset)
            status = running
        else:
            reader.u8()
        if 0x80 <= status <= 0xEF:
            running = status
            body = reader.take(_CHANNEL_DATA_LEN[status & 0xF0], "event data bytes")
            if any(b & 0x80 for b in body):
                raise InvalidEvent(f"status byte inside channel message {status:#04x}", offset=event_offset)
            kind = status & 0xF0
            channel = status & 0x0F
            if kind == 0x90 and body[1] > 0:
                ev = NoteOn(channel=channel, pitch=body[0], velocity=body[1])
            elif kind in (0x80, 0x90):
                # NoteOn velocity 0 is a release
                ev = NoteOff(channel=channel, pitch=body[0], velocity=body[1] if kind == 0x80 else 0)
            else:
                ev = OtherChannel(status=status, data=body)
            events.append(TimedEvent(tick=tick, event=ev))
        elif status == 0xFF:
            running = None
            meta_type = reader.u8()
            if meta_type > 0x7F:
                raise InvalidEvent(f"meta type {meta_type:#04x} out of range", offset=event_offset)
            length = reader.varlen(BadVarLen)
            payload = reader.take(length, "meta payload bytes")
            ev = _decode_meta(meta_type, payload, event_offset)
            events.append(TimedEvent(tick=tick, event=ev))
            if isinstance(ev, EndOfTrack):
                result = _TrackParse(Track(events=tuple(events)), chunk_offset)
                if not reader.at_end():
                    result.trailing_after_eot = reader.pos
                return result
        elif status in (0xF0, 0xF7):
            running = None
            length = reader.varlen(BadVarLen)
            payload = reader.take(length, "sysex payload bytes")
            events.append(TimedEvent(tick=tick, event=SysEx(status=status, data=payload)))
        else:
            raise InvalidEvent(f"status byte {status:#04x} not allowed in a file", offset=event_offset)
    # Chunk ended without EndOfTrack: close it at the last tick
    events.append(TimedEvent(tick=tick, event=EndOfTrack()))
    result = _TrackParse(Track(events=tuple(events)), chunk_offset)
    result.missing_eot = True
    return result


def _parse(data: bytes) -> tuple[MidiFile, list[_TrackParse], int | None]:
    """Decode `data`; returns the file, per-track lint data and the offset of trailing garbage."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise MalformedHeader("input is not a byte sequence", offset=0)
    data = bytes(data)
    head = ByteReader(data, MalformedHeader)
    if head.take(4, "header magic bytes") != SMF_HEADER_MAGIC:
        raise MalformedHeader("missing 'MThd' chunk", offset=0)
    (hlen,) = head.unpack(">I")
    if hlen < 6:
        raise MalformedHeader(f"header length {hlen} shorter than 6", offset=4)
    fmt, ntrks, division = head.unpack(">HHH")
    head.take(hlen - 6, "header padding bytes")
    if fmt == 2:
        raise UnsupportedFormat("SMF format 2 (independent sequences) is not supported", offset=8)
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"unknown SMF format {fmt}", offset=8)
    if division & 0x8000:
        raise SmpteDivision("SMPTE time division has no ticks-per-quarter grid", offset=12)
    if division == 0:
        raise MalformedHeader("division of 0 ticks per quarter", offset=12)
    if ntrks == 0:
        raise MalformedHeader("header declares zero tracks", offset=10)
    if fmt == 0 and ntrks != 1:
        raise MalformedHeader(f"format 0 declares {ntrks} tracks", offset=10)

    parsed: list[_TrackParse] = []
    pos = head.pos
    while len(parsed) < ntrks:
        if pos + 8 > len(data):
            raise TruncatedTrack(f"expected {ntrks} tracks, found {len(parsed)}", offset=pos)
        magic = data[pos : pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        body_start = pos + 8
        if body_start + length > len(data):
            raise TruncatedTrack(
                f"chunk declares {length} bytes, only {len(data) - body_start} available", offset=pos + 4
            )
        if magic == SMF_TRACK_MAGIC:
            parsed.append(_parse_track(data, body_start, body_start + length, pos))
        else:
            logger.debug("skipping unknown chunk %r at offset %d", magic, pos)
        pos = body_start + length
    tail = pos if pos < len(data) else None
    midi = MidiFile(
        format=SmfFormat(fmt),
        division=division,
        tracks=tuple(p.track for p in parsed),
    )
    return midi, parsed, tail


def parse_smf(data: bytes) -> MidiFile:
    """Parse a Standard MIDI File (format 0 or 1).

    Raises a `MidiFormatError` subclass for every malformed input; no other
    exception type escapes for arbitrary bytes.
    """
    try:
        midi, _, _ = _parse(data)
    except MidiFormatError:
        raise
    except ValidationError as exc:
        raise InvalidEvent(f"event fields out of range: {exc.errors()[0].get('msg', '')}") from exc
    return midi


def _encode_event(event) -> bytes:
    if isinstance(event, NoteOn):
        return bytes([0x90 | event.channel, event.pitch, event.velocity])
    if isinstance(event, NoteOff):
        return bytes([0x80 | event.channel, event.pitch, event.velocity])
    if isinstance(event, OtherChannel):
        expected = _CHANNEL_DATA_LEN[event.status & 0xF0]
        if len(event.data) != expected:
            raise InvariantViolation(f"status {event.status:#04x} needs {expected} data bytes")
        return bytes([event.status]) + event.data
    if isinstance(event, Tempo):
        return b"\xff\x51\x03" + event.us_per_quarter.to_bytes(3, "big")
    if isinstance(event, TimeSignature):
        dd = event.denominator.bit_length() - 1
        if dd > 255:
            raise InvariantViolation("time signature denominator exponent exceeds one byte")
        return bytes([0xFF, META_TIME_SIGNATURE, 4, event.numerator, dd, event.clocks_per_click, event.notated_32nds])
    if isinstance(event, EndOfTrack):
        return b"\xff\x2f\x00"
    if isinstance(event, OtherMeta):
        return bytes([0xFF, event.meta_type]) + encode_varlen(len(event.data)) + event.data
    if isinstance(event, SysEx):
        return bytes([event.status]) + encode_varlen(len(event.data)) + event.data
    raise InvariantViolation(f"cannot encode event {event!r}")


def write_smf(file: MidiFile) -> bytes:
    """Serialize without running status; every event carries its status byte."""
    issues = file.invariant_issues()
    if issues:
        raise InvariantViolation("; ".join(issues))
    out = bytearray()
    out += SMF_HEADER_MAGIC + struct.pack(">IHHH", 6, int(file.format), len(file.tracks), file.division)
    for track in file.tracks:
        body = bytearray()
        prev = 0
        for te in track.events:
            delta = te.tick - prev
            if delta > 0x0FFFFFFF:
                raise InvariantViolation(f"delta time {delta} exceeds variable-length range")
            body += encode_varlen(delta)
            body += _encode_event(te.event)
            prev = te.tick
        out += SMF_TRACK_MAGIC + struct.pack(">I", len(body)) + body
    return bytes(out)


def _unmatched_note_ons(track: Track) -> list[tuple[int, int, int]]:
    open_notes: dict[tuple[int, int], list[int]] = defaultdict(list)
    for te in track.events:
        ev = te.event
        if isinstance(ev, NoteOn):
            open_notes[(ev.channel, ev.pitch)].append(te.tick)
        elif isinstance(ev, NoteOff) and open_notes[(ev.channel, ev.pitch)]:
            open_notes[(ev.channel, ev.pitch)].pop(0)
    return [(tick, ch, pitch) for (ch, pitch), ticks in open_notes.items() for tick in ticks]


def validate_smf(data: bytes) -> ValidationReport:
    """Lint `data`; reports every problem instead of raising."""
    issues: list[ValidationIssue] = []
    try:
        midi, parsed, tail = _parse(data)
    except MidiFormatError as exc:
        issues.append(ValidationIssue(severity=Severity.ERROR, code=exc.code, offset=exc.offset, message=exc.message))
        return ValidationReport(issues=tuple(issues))
    except ValidationError as exc:
        issues.append(ValidationIssue(severity=Severity.ERROR, code=InvalidEvent.code, message=str(exc)))
        return ValidationReport(issues=tuple(issues))

    for index, tp in enumerate(parsed):
        if tp.missing_eot:
            issues.append(
                ValidationIssue(
                    severity=Severity.WARNING,
                    code="missing-end-of-track",
                    offset=tp.chunk_offset,
                    message=f"track {index} has no EndOfTrack event",
                )
            )
        if tp.trailing_after_eot is not None:
            issues.append(
                ValidationIssue(
                    severity=Severity.WARNING,
                    code="events-after-end-of-track",
                    offset=tp.trailing_after_eot,
                    message=f"track {index} has bytes after EndOfTrack",
                )
            )
        for tick, ch, pitch in _unmatched_note_ons(tp.track):
            issues.append(
                ValidationIssue(
                    severity=Severity.WARNING,
                    code="unmatched-note-on",
                    offset=tp.chunk_offset,
                    message=f"track {index}: note {pitch} on channel {ch} at tick {tick} is never released",
                )
            )
    if tail is not None:
        issues.append(
            ValidationIssue(
                severity=Severity.WARNING,
                code="zero-length-tail",
                offset=tail,
                message=f"{len(bytes(data)) - tail} bytes after the last track chunk",
            )
        )
    return ValidationReport(issues=tuple(issues))


def merge_to_single_track(file: MidiFile) -> list[TimedEvent]:
    """All tracks in one tick-sorted list, percussion channel removed.

    Equal ticks keep (track index, original position) order.
    """
    merged: list[TimedEvent] = []
    for track in file.tracks:
        for te in track.events:
            if event_channel(te.event) == PERCUSSION_CHANNEL:
                continue
            merged.append(te)
    # list.sort is stable, so concatenation order breaks ties
    merged.sort(key=lambda te: te.tick)
    return merged


def note_events(file: MidiFile) -> Counter[NoteKey]:
    """Multiset of (tick, channel, pitch, velocity, on) across all tracks."""
    out: Counter[NoteKey] = Counter()
    for track in file.tracks:
        for te in track.events:
            ev = te.event
            if isinstance(ev, NoteOn):
                out[(te.tick, ev.channel, ev.pitch, ev.velocity, True)] += 1
            elif isinstance(ev, NoteOff):
                out[(te.tick, ev.channel, ev.pitch, ev.velocity, False)] += 1
    return out


def read_midi_file(path: str | Path) -> MidiFile:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_smf(data)


def write_midi_file(path: str | Path, file: MidiFile) -> bytes:
    data = write_smf(file)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return data
