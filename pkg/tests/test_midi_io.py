from __future__ import annotations

import pytest

from core.errors import (
    BadVarLen,
    InvalidEvent,
    InvariantViolation,
    IoFailure,
    MalformedHeader,
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
    SmfFormat,
    SysEx,
    Tempo,
    TimedEvent,
    TimeSignature,
    Track,
)
from core.services.midi_io import (
    merge_to_single_track,
    note_events,
    parse_smf,
    read_midi_file,
    validate_smf,
    write_midi_file,
    write_smf,
)
from core.utils.binary import ByteReader, encode_varlen

EOT = b"\x00\xff\x2f\x00"


def _file(*tracks: list[TimedEvent], fmt: SmfFormat = SmfFormat.MULTI_TRACK, division: int = 480) -> MidiFile:
    return MidiFile(format=fmt, division=division, tracks=tuple(Track(events=tuple(t)) for t in tracks))


def test_parse_simple_file(midi_from_notes):
    data = midi_from_notes([(0, 480, 60), (480, 960, 64)], division=480)
    midi = parse_smf(data)
    assert midi.format == SmfFormat.SINGLE
    assert midi.division == 480
    assert len(midi.tracks) == 1
    events = [te.event for te in midi.tracks[0].events]
    assert isinstance(events[0], Tempo) and events[0].us_per_quarter == 500_000
    assert isinstance(events[1], TimeSignature) and events[1].is_four_four()
    ons = [e for e in events if isinstance(e, NoteOn)]
    offs = [e for e in events if isinstance(e, NoteOff)]
    assert [e.pitch for e in ons] == [60, 64]
    assert [e.pitch for e in offs] == [60, 64]
    assert isinstance(events[-1], EndOfTrack)
    assert midi.tracks[0].events[-1].tick == 960


def test_running_status_and_zero_velocity_release(smf_parts):
    body = b"\x00\x90\x3c\x64" + b"\x60\x3c\x00" + EOT
    midi = parse_smf(smf_parts.header(0, 1, 96) + smf_parts.chunk(b"MTrk", body))
    events = midi.tracks[0].events
    assert events[0].event == NoteOn(channel=0, pitch=60, velocity=100)
    assert events[1].tick == 96
    assert events[1].event == NoteOff(channel=0, pitch=60, velocity=0)


def test_write_then_parse_preserves_structure():
    conductor = [
        TimedEvent(tick=0, event=Tempo(us_per_quarter=600_000)),
        TimedEvent(tick=0, event=TimeSignature(numerator=4, denominator=4)),
        TimedEvent(tick=0, event=OtherMeta(meta_type=0x03, data=b"title")),
        TimedEvent(tick=0, event=EndOfTrack()),
    ]
    notes = [
        TimedEvent(tick=0, event=OtherChannel(status=0xC1, data=b"\x05")),
        TimedEvent(tick=0, event=NoteOn(channel=1, pitch=60, velocity=90)),
        TimedEvent(tick=200, event=OtherChannel(status=0xB1, data=b"\x07\x64")),
        TimedEvent(tick=240, event=NoteOff(channel=1, pitch=60, velocity=40)),
        TimedEvent(tick=240, event=SysEx(status=0xF0, data=b"\x7e\x7f\x09\x01\xf7")),
        TimedEvent(tick=100_000, event=EndOfTrack()),
    ]
    original = _file(conductor, notes, division=96)
    data = write_smf(original)
    assert parse_smf(data) == original
    assert note_events(parse_smf(data)) == note_events(original)


def test_writer_uses_no_running_status():
    track = [
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=100)),
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=64, velocity=100)),
        TimedEvent(tick=10, event=EndOfTrack()),
    ]
    data = write_smf(_file(track, fmt=SmfFormat.SINGLE))
    assert data.count(b"\x90") == 2


@pytest.mark.parametrize(
    "track, fmt",
    [
        ([TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=1))], SmfFormat.SINGLE),
        (
            [
                TimedEvent(tick=10, event=NoteOn(channel=0, pitch=60, velocity=1)),
                TimedEvent(tick=5, event=EndOfTrack()),
            ],
            SmfFormat.SINGLE,
        ),
    ],
)
def test_writer_refuses_invalid_tracks(track, fmt):
    with pytest.raises(InvariantViolation):
        write_smf(_file(track, fmt=fmt))


def test_writer_refuses_format0_with_two_tracks():
    eot = [TimedEvent(tick=0, event=EndOfTrack())]
    with pytest.raises(InvariantViolation):
        write_smf(_file(eot, eot, fmt=SmfFormat.SINGLE))


def test_empty_input_is_malformed_header():
    with pytest.raises(MalformedHeader) as info:
        parse_smf(b"")
    assert info.value.offset == 0


def test_bad_magic(smf_parts):
    with pytest.raises(MalformedHeader):
        parse_smf(b"RIFF" + smf_parts.header(0, 1, 480)[4:] + smf_parts.chunk(b"MTrk", EOT))


def test_format_two_unsupported(smf_parts):
    with pytest.raises(UnsupportedFormat):
        parse_smf(smf_parts.header(2, 1, 480) + smf_parts.chunk(b"MTrk", EOT))


def test_smpte_division(smf_parts):
    with pytest.raises(SmpteDivision):
        parse_smf(smf_parts.header(1, 1, 0xE728) + smf_parts.chunk(b"MTrk", EOT))


def test_format_zero_with_two_tracks(smf_parts):
    track = smf_parts.chunk(b"MTrk", EOT)
    with pytest.raises(MalformedHeader):
        parse_smf(smf_parts.header(0, 2, 480) + track + track)


def test_truncated_track(smf_parts):
    data = smf_parts.header(0, 1, 480) + b"MTrk" + (100).to_bytes(4, "big") + EOT
    with pytest.raises(TruncatedTrack):
        parse_smf(data)


def test_missing_track_chunk(smf_parts):
    with pytest.raises(TruncatedTrack):
        parse_smf(smf_parts.header(1, 2, 480) + smf_parts.chunk(b"MTrk", EOT))


def test_overlong_varlen(smf_parts):
    data = smf_parts.header(0, 1, 480) + smf_parts.chunk(b"MTrk", b"\x81\x81\x81\x81\x00" + EOT)
    with pytest.raises(BadVarLen):
        parse_smf(data)


@pytest.mark.parametrize(
    "body",
    [
        b"\x00\x3c\x40" + EOT,  # data byte with no running status
        b"\x00\xf1\x00" + EOT,  # system common message
        b"\x00\xff\x51\x02\x07\xa1" + EOT,  # tempo payload too short
        b"\x00\x90\x3c\x90" + EOT,  # status byte where a data byte belongs
    ],
)
def test_invalid_events(smf_parts, body):
    with pytest.raises(InvalidEvent):
        parse_smf(smf_parts.header(0, 1, 480) + smf_parts.chunk(b"MTrk", body))


def test_unknown_chunks_are_skipped(smf_parts):
    data = smf_parts.header(1, 1, 480) + smf_parts.chunk(b"XFIH", b"abc") + smf_parts.chunk(b"MTrk", EOT)
    midi = parse_smf(data)
    assert len(midi.tracks) == 1


def test_validate_clean_file(midi_from_notes):
    report = validate_smf(midi_from_notes([(0, 120, 60)]))
    assert report.is_valid
    assert report.issues == ()


def test_validate_reports_header_error_with_offset():
    report = validate_smf(b"MThd\x00\x00\x00\x02\x00\x00")
    assert not report.is_valid
    assert report.errors[0].code == "MalformedHeader"
    assert report.errors[0].offset == 4


def test_validate_warnings(smf_parts):
    no_eot = b"\x00\x90\x3c\x64"
    after_eot = b"\x00\x90\x3c\x64\x10\x80\x3c\x00" + EOT + b"\x00\x90\x3c\x64"
    data = (
        smf_parts.header(1, 2, 480)
        + smf_parts.chunk(b"MTrk", no_eot)
        + smf_parts.chunk(b"MTrk", after_eot)
        + b"\x00\x00"
    )
    report = validate_smf(data)
    assert report.is_valid
    assert report.has("missing-end-of-track")
    assert report.has("events-after-end-of-track")
    assert report.has("unmatched-note-on")
    assert report.has("zero-length-tail")
    tail = next(i for i in report.issues if i.code == "zero-length-tail")
    assert tail.offset == len(data) - 2


def test_merge_drops_percussion_and_keeps_tie_order():
    t0 = [
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=10)),
        TimedEvent(tick=5, event=NoteOn(channel=9, pitch=36, velocity=10)),
        TimedEvent(tick=10, event=EndOfTrack()),
    ]
    t1 = [
        TimedEvent(tick=0, event=NoteOn(channel=1, pitch=62, velocity=10)),
        TimedEvent(tick=10, event=EndOfTrack()),
    ]
    merged = merge_to_single_track(_file(t0, t1))
    pitches = [te.event.pitch for te in merged if isinstance(te.event, NoteOn)]
    assert pitches == [60, 62]
    assert [te.tick for te in merged] == sorted(te.tick for te in merged)


def test_file_helpers(tmp_path):
    track = [
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=100)),
        TimedEvent(tick=96, event=NoteOff(channel=0, pitch=60, velocity=0)),
        TimedEvent(tick=96, event=EndOfTrack()),
    ]
    original = _file(track, fmt=SmfFormat.SINGLE, division=96)
    path = tmp_path / "one.mid"
    data = write_midi_file(path, original)
    assert path.read_bytes() == data
    assert read_midi_file(path) == original
    with pytest.raises(IoFailure):
        read_midi_file(tmp_path / "missing.mid")
    with pytest.raises(IoFailure):
        write_midi_file(tmp_path / "no" / "dir.mid", original)


@pytest.mark.parametrize(
    "value, encoded",
    [(0, b"\x00"), (0x7F, b"\x7f"), (0x80, b"\x81\x00"), (0x3FFF, b"\xff\x7f"), (0x0FFFFFFF, b"\xff\xff\xff\x7f")],
)
def test_varlen_encoding(value, encoded):
    assert encode_varlen(value) == encoded
    reader = ByteReader(encoded + b"\x2a", TruncatedTrack)
    assert reader.varlen(BadVarLen) == value
    assert reader.u8() == 0x2A
    assert reader.at_end()


def test_varlen_bounds():
    with pytest.raises(ValueError):
        encode_varlen(0x10000000)
    with pytest.raises(BadVarLen):
        ByteReader(b"\xff\xff\xff\xff\x00", TruncatedTrack).varlen(BadVarLen)
    with pytest.raises(TruncatedTrack):
        ByteReader(b"\x81", TruncatedTrack).varlen(BadVarLen)
