from __future__ import annotations

import logging
from collections import defaultdict, deque
from collections.abc import Iterable, Sequence

import numpy as np

from core.errors import EmptyInput, NonFiniteInput, NotFourFour, PieceTooLong, ShapeMismatch
from core.models.midi import (
    EndOfTrack,
    MidiFile,
    NoteOff,
    NoteOn,
    SmfFormat,
    Tempo,
    TimedEvent,
    TimeSignature,
    Track,
)
from core.models.roll import ConversionConfig, PhraseExtraction, PianoRollPhrase, QuantizedNote
from core.schema import PHRASE_STEPS, PITCH_COUNT

from .midi_io import merge_to_single_track

logger = logging.getLogger("mst_core.pianoroll")


def _tick_to_step(tick: int, ppq: int) -> int:
    # round(tick / (ppq/4)) with halves rounded up, in exact integer arithmetic
    return (8 * tick + ppq) // (2 * ppq)


def quantize_notes(events: Sequence[TimedEvent], ppq: int) -> list[QuantizedNote]:
    """Pair note on/off events and snap them to the 16th-note grid.

    Pairing is first-in first-out per (channel, pitch). Releases without an
    open note are ignored; notes still open at the end are closed at the final
    event tick. Every note lasts at least one step.
    """
    if ppq <= 0:
        raise ValueError("ppq must be positive")
    open_notes: dict[tuple[int, int], deque[int]] = defaultdict(deque)
    spans: list[tuple[int, int, int]] = []  # (start_tick, end_tick, pitch)
    last_tick = 0
    for te in events:
        last_tick = max(last_tick, te.tick)
        ev = te.event
        if isinstance(ev, NoteOn):
            open_notes[(ev.channel, ev.pitch)].append(te.tick)
        elif isinstance(ev, NoteOff):
            pending = open_notes.get((ev.channel, ev.pitch))
            if pending:
                spans.append((pending.popleft(), te.tick, ev.pitch))
    for (_, pitch), pending in open_notes.items():
        for start in pending:
            spans.append((start, last_tick, pitch))

    notes: list[QuantizedNote] = []
    for start_tick, end_tick, pitch in spans:
        start = _tick_to_step(start_tick, ppq)
        end = _tick_to_step(end_tick, ppq)
        notes.append(QuantizedNote(pitch=pitch, start_step=start, length_steps=max(1, end - start)))
    notes.sort(key=lambda n: (n.start_step, n.pitch, n.length_steps))
    return notes


def check_time_signature(file: MidiFile) -> bool:
    """True when every time signature is 4/4; a file without any counts as 4/4."""
    for track in file.tracks:
        for te in track.events:
            if isinstance(te.event, TimeSignature) and not te.event.is_four_four():
                return False
    return True


def _window_rolls(notes: Iterable[QuantizedNote], total: int, cfg: ConversionConfig) -> dict[int, np.ndarray]:
    """Rolls of the windows that hold at least one in-range note, keyed by window index."""
    windows: dict[int, np.ndarray] = {}
    for note in notes:
        if not cfg.pitch_low <= note.pitch < cfg.pitch_high:
            continue
        col = note.pitch - cfg.pitch_low
        last = min((note.end_step - 1) // PHRASE_STEPS, total - 1)
        for w in range(note.start_step // PHRASE_STEPS, last + 1):
            base = w * PHRASE_STEPS
            roll = windows.get(w)
            if roll is None:
                roll = windows[w] = np.zeros((PHRASE_STEPS, PITCH_COUNT), dtype=np.uint8)
            roll[max(note.start_step - base, 0) : min(note.end_step - base, PHRASE_STEPS), col] = 1
    return windows


def extract_phrases(file: MidiFile, cfg: ConversionConfig | None = None) -> PhraseExtraction:
    cfg = cfg or ConversionConfig()
    if cfg.require_four_four and not check_time_signature(file):
        raise NotFourFour("file contains a time signature other than 4/4")
    events = merge_to_single_track(file)
    notes = quantize_notes(events, file.division)
    last_event_step = _tick_to_step(events[-1].tick, file.division) if events else 0
    n_steps = max([last_event_step] + [n.end_step for n in notes])
    if 0 < n_steps < PHRASE_STEPS:
        # pieces shorter than one phrase are padded with silence
        n_steps = PHRASE_STEPS
    total = n_steps // PHRASE_STEPS
    if total > cfg.max_windows:
        raise PieceTooLong(f"piece spans {total} phrase windows, limit is {cfg.max_windows}")

    windows = _window_rolls(notes, total, cfg)
    indices = sorted(windows)
    return PhraseExtraction(
        phrases=tuple(PianoRollPhrase(windows[w]) for w in indices),
        window_indices=tuple(indices),
        total_windows=total,
        empty_windows=total - len(indices),
        partial_steps_dropped=n_steps - total * PHRASE_STEPS,
    )


def midi_to_phrases(file: MidiFile, cfg: ConversionConfig | None = None) -> list[PianoRollPhrase]:
    """Cut a file into non-empty 64-step phrases starting at step 0.

    The trailing partial window and all-zero windows are dropped.
    """
    return list(extract_phrases(file, cfg).phrases)


def phrases_to_midi(phrases: Sequence[PianoRollPhrase], cfg: ConversionConfig | None = None) -> MidiFile:
    """Emit phrases back-to-back as a format 0 file on an exact 16th-note grid."""
    cfg = cfg or ConversionConfig()
    if not phrases:
        raise EmptyInput("no phrases to emit")
    roll = np.concatenate([p.cells for p in phrases], axis=0)
    step_ticks = cfg.ticks_per_step
    n_steps = roll.shape[0]

    # +1 at run starts, -1 one past run ends
    padded = np.zeros((n_steps + 2, PITCH_COUNT), dtype=np.int8)
    padded[1:-1] = roll
    edges = np.diff(padded, axis=0)
    # (tick, order, pitch, event); releases sort before attacks at equal ticks
    timeline: list[tuple[int, int, int, object]] = []
    for step, col in zip(*np.nonzero(edges)):
        pitch = cfg.pitch_low + int(col)
        tick = int(step) * step_ticks
        if edges[step, col] > 0:
            timeline.append((tick, 1, pitch, NoteOn(channel=0, pitch=pitch, velocity=cfg.emit_velocity)))
        else:
            timeline.append((tick, 0, pitch, NoteOff(channel=0, pitch=pitch, velocity=0)))
    timeline.sort(key=lambda item: (item[0], item[1], item[2]))

    us_per_quarter = int(round(60_000_000 / cfg.emit_tempo_bpm))
    events = [
        TimedEvent(tick=0, event=Tempo(us_per_quarter=us_per_quarter)),
        TimedEvent(tick=0, event=TimeSignature(numerator=4, denominator=4)),
    ]
    events.extend(TimedEvent(tick=tick, event=ev) for tick, _, _, ev in timeline)
    events.append(TimedEvent(tick=n_steps * step_ticks, event=EndOfTrack()))
    return MidiFile(format=SmfFormat.SINGLE, division=cfg.emit_ppq, tracks=(Track(events=tuple(events)),))


def binarize(matrix: np.ndarray, threshold: float = 0.5) -> PianoRollPhrase:
    """Cell is on iff the value is strictly greater than `threshold`."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.shape in ((1, PHRASE_STEPS, PITCH_COUNT), (1, 1, PHRASE_STEPS, PITCH_COUNT)):
        arr = arr.reshape(PHRASE_STEPS, PITCH_COUNT)
    if arr.shape != (PHRASE_STEPS, PITCH_COUNT):
        raise ShapeMismatch(f"expected {PHRASE_STEPS}x{PITCH_COUNT} matrix, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("matrix contains NaN or infinite entries")
    return PianoRollPhrase((arr > threshold).astype(np.uint8))


def roll_density(phrases: Sequence[PianoRollPhrase]) -> float:
    """Mean cell value over all phrases; 0.0 for an empty sequence."""
    if not phrases:
        return 0.0
    total = sum(int(p.cells.sum()) for p in phrases)
    return total / (PHRASE_STEPS * PITCH_COUNT * len(phrases))
