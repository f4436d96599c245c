from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import EmptyInput, InvariantViolation, NonFiniteInput, NotFourFour, PieceTooLong, ShapeMismatch
from core.models.midi import NoteOff, NoteOn, Tempo, TimedEvent, TimeSignature
from core.models.roll import ConversionConfig, PianoRollPhrase
from core.services.midi_io import parse_smf, validate_smf, write_smf
from core.services.pianoroll import (
    binarize,
    check_time_signature,
    extract_phrases,
    midi_to_phrases,
    phrases_to_midi,
    quantize_notes,
    roll_density,
)

STEP = 120  # ticks per 16th note at 480 ppq


def _col(pitch: int) -> int:
    return pitch - 24


def test_single_note_lands_on_grid(midi_from_notes):
    phrases = midi_to_phrases(parse_smf(midi_from_notes([(0, 4 * STEP, 60)])))
    assert len(phrases) == 1
    cells = phrases[0].cells
    assert cells[0:4, _col(60)].tolist() == [1, 1, 1, 1]
    assert cells.sum() == 4


def test_quantization_rounds_half_up():
    events = [
        TimedEvent(tick=60, event=NoteOn(channel=0, pitch=60, velocity=1)),
        TimedEvent(tick=59, event=NoteOn(channel=0, pitch=62, velocity=1)),
        TimedEvent(tick=480, event=NoteOff(channel=0, pitch=60)),
        TimedEvent(tick=480, event=NoteOff(channel=0, pitch=62)),
    ]
    events.sort(key=lambda te: te.tick)
    notes = {n.pitch: n for n in quantize_notes(events, 480)}
    assert notes[60].start_step == 1
    assert notes[62].start_step == 0
    assert notes[60].end_step == notes[62].end_step == 4


def test_very_short_note_lasts_one_step():
    events = [
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=1)),
        TimedEvent(tick=10, event=NoteOff(channel=0, pitch=60)),
    ]
    (note,) = quantize_notes(events, 480)
    assert note.length_steps == 1


def test_overlapping_same_pitch_pairs_first_in_first_out():
    events = [
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=1)),
        TimedEvent(tick=STEP, event=NoteOn(channel=0, pitch=60, velocity=1)),
        TimedEvent(tick=2 * STEP, event=NoteOff(channel=0, pitch=60)),
        TimedEvent(tick=5 * STEP, event=NoteOff(channel=0, pitch=60)),
    ]
    notes = quantize_notes(events, 480)
    assert [(n.start_step, n.length_steps) for n in notes] == [(0, 2), (1, 4)]


def test_unreleased_note_closes_at_last_event():
    events = [
        TimedEvent(tick=0, event=NoteOn(channel=0, pitch=60, velocity=1)),
        TimedEvent(tick=8 * STEP, event=Tempo(us_per_quarter=500_000)),
    ]
    (note,) = quantize_notes(events, 480)
    assert note.length_steps == 8


def test_non_four_four_rejected(midi_from_notes):
    midi = parse_smf(midi_from_notes([(0, STEP, 60)], time_signature=(3, 4)))
    with pytest.raises(NotFourFour):
        midi_to_phrases(midi)
    assert not check_time_signature(midi)
    assert midi_to_phrases(midi, ConversionConfig(require_four_four=False))


def test_missing_time_signature_counts_as_four_four(midi_from_notes):
    midi = parse_smf(midi_from_notes([(0, STEP, 60)], time_signature=None))
    assert check_time_signature(midi)
    assert len(midi_to_phrases(midi)) == 1


def test_out_of_range_and_percussion_notes_dropped(midi_from_notes):
    data = midi_from_notes([(0, STEP, 10), (0, STEP, 120), (0, STEP, 40, 9), (0, STEP, 24), (0, STEP, 107)])
    (phrase,) = midi_to_phrases(parse_smf(data))
    assert phrase.cells[0].nonzero()[0].tolist() == [0, 83]


def test_empty_windows_and_partial_tail_are_dropped(midi_from_notes):
    data = midi_from_notes([(0, 4 * STEP, 60), (130 * STEP, 131 * STEP, 62)])
    extraction = extract_phrases(parse_smf(data))
    assert extraction.total_windows == 2
    assert extraction.empty_windows == 1
    assert extraction.partial_steps_dropped == 3
    assert extraction.window_indices == (0,)
    assert len(extraction.phrases) == 1


def test_short_piece_is_padded_to_one_phrase(midi_from_notes):
    extraction = extract_phrases(parse_smf(midi_from_notes([(0, 2 * STEP, 60)])))
    assert extraction.total_windows == 1
    assert extraction.phrases[0].cells.sum() == 2


def test_silent_file_has_no_phrases(midi_from_notes):
    assert midi_to_phrases(parse_smf(midi_from_notes([]))) == []


def test_far_apart_notes_only_materialise_their_windows(midi_from_notes):
    data = midi_from_notes([(0, 4 * STEP, 60), (1000 * 64 * STEP, 1001 * 64 * STEP, 62)])
    extraction = extract_phrases(parse_smf(data))
    assert extraction.total_windows == 1001
    assert extraction.window_indices == (0, 1000)
    assert extraction.empty_windows == 999
    assert extraction.phrases[1].cells[:, _col(62)].sum() == 64


def test_note_spanning_several_windows_fills_each(midi_from_notes):
    extraction = extract_phrases(parse_smf(midi_from_notes([(60 * STEP, 200 * STEP, 67)])))
    assert extraction.window_indices == (0, 1, 2)
    assert extraction.partial_steps_dropped == 8
    first, second, third = (p.cells[:, _col(67)] for p in extraction.phrases)
    assert first.nonzero()[0].tolist() == [60, 61, 62, 63]
    assert second.all()
    assert third.all()


def test_piece_longer_than_window_limit_is_rejected(smf_parts, midi_from_notes):
    # one note held for the largest delta time a track can encode, at 1 tick per quarter
    body = b"\x00\x90\x3c\x64" + b"\xff\xff\xff\x7f\x80\x3c\x00" + b"\x00\xff\x2f\x00"
    huge = parse_smf(smf_parts.header(0, 1, 1) + smf_parts.chunk(b"MTrk", body))
    with pytest.raises(PieceTooLong):
        extract_phrases(huge)
    two_windows = parse_smf(midi_from_notes([(0, STEP, 60), (64 * STEP, 128 * STEP, 60)]))
    with pytest.raises(PieceTooLong):
        extract_phrases(two_windows, ConversionConfig(max_windows=1))
    assert extract_phrases(two_windows, ConversionConfig(max_windows=2)).total_windows == 2


def test_roundtrip_is_exact(phrase_factory, rng):
    phrases = [phrase_factory(rng, density) for density in (0.02, 0.1, 0.3)]
    midi = phrases_to_midi(phrases)
    data = write_smf(midi)
    report = validate_smf(data)
    assert report.is_valid and report.issues == ()
    assert midi_to_phrases(parse_smf(data)) == phrases


def test_emitted_file_carries_tempo_and_meter(phrase_factory, rng):
    midi = phrases_to_midi([phrase_factory(rng)], ConversionConfig(emit_tempo_bpm=90.0, emit_ppq=96))
    events = [te.event for te in midi.tracks[0].events]
    assert midi.division == 96
    assert Tempo(us_per_quarter=666_667) in events
    assert TimeSignature(numerator=4, denominator=4) in events
    assert midi.tracks[0].events[-1].tick == 64 * 24


def test_held_note_across_phrase_boundary_is_one_note():
    cells = np.zeros((64, 84), dtype=np.uint8)
    cells[60:64, 10] = 1
    nxt = np.zeros((64, 84), dtype=np.uint8)
    nxt[0:4, 10] = 1
    midi = phrases_to_midi([PianoRollPhrase(cells), PianoRollPhrase(nxt)])
    ons = [te for te in midi.tracks[0].events if isinstance(te.event, NoteOn)]
    assert len(ons) == 1
    assert ons[0].tick == 60 * STEP


def test_phrases_to_midi_requires_input():
    with pytest.raises(EmptyInput):
        phrases_to_midi([])


def test_binarize_threshold_is_strict():
    m = np.full((64, 84), 0.5)
    m[3, 4] = 0.5000001
    phrase = binarize(m)
    assert phrase.cells.sum() == 1
    assert phrase.cells[3, 4] == 1


def test_binarize_accepts_network_shape_and_rejects_bad_input():
    assert binarize(np.ones((1, 1, 64, 84))).cells.all()
    with pytest.raises(ShapeMismatch):
        binarize(np.ones((64, 83)))
    bad = np.zeros((64, 84))
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        binarize(bad)


def test_phrase_type_invariants():
    with pytest.raises(ShapeMismatch):
        PianoRollPhrase(np.zeros((63, 84)))
    with pytest.raises(InvariantViolation):
        PianoRollPhrase(np.full((64, 84), 2, dtype=np.uint8))
    phrase = PianoRollPhrase.zeros()
    with pytest.raises(ValueError):
        phrase.cells[0, 0] = 1
    assert phrase.is_empty()
    assert PianoRollPhrase.from_bytes(phrase.to_bytes()) == phrase
    assert phrase.to_tensor().shape == (1, 1, 64, 84)
    assert phrase.to_tensor().dtype == np.float32


def test_roll_density(phrase_factory, rng):
    assert roll_density([]) == 0.0
    full = PianoRollPhrase(np.ones((64, 84), dtype=np.uint8))
    assert roll_density([full, PianoRollPhrase.zeros()]) == pytest.approx(0.5)


def test_conversion_config_rejects_inexact_grid():
    with pytest.raises(ValidationError):
        ConversionConfig(emit_ppq=90)
    with pytest.raises(ValidationError):
        ConversionConfig(pitch_low=60)
