from __future__ import annotations

import struct
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

# Ensure project root is importable as a module path
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.models.dataset import LabeledDataset, LabeledPhrase, Sentiment
from core.models.roll import PianoRollPhrase
from core.models.training import TrainingConfig
from core.settings import reset_settings_cache
from core.utils.binary import encode_varlen

# (start_tick, end_tick, pitch) or (start_tick, end_tick, pitch, channel)
NoteSpec = tuple[int, ...]


def chunk(magic: bytes, body: bytes) -> bytes:
    return magic + struct.pack(">I", len(body)) + body


def header(fmt: int, ntracks: int, division: int) -> bytes:
    return chunk(b"MThd", struct.pack(">HHH", fmt, ntracks, division))


def note_track_body(
    notes: Sequence[NoteSpec],
    *,
    time_signature: tuple[int, int] | None = (4, 4),
    tempo: int | None = 500_000,
    end_of_track: bool = True,
) -> bytes:
    """Raw MTrk body with absolute-tick notes converted to delta times."""
    timeline: list[tuple[int, int, bytes]] = []
    if tempo is not None:
        timeline.append((0, 0, b"\xff\x51\x03" + tempo.to_bytes(3, "big")))
    if time_signature is not None:
        nn, denom = time_signature
        dd = denom.bit_length() - 1
        timeline.append((0, 0, bytes([0xFF, 0x58, 4, nn, dd, 24, 8])))
    for spec in notes:
        start, end, pitch = spec[:3]
        ch = spec[3] if len(spec) > 3 else 0
        timeline.append((start, 2, bytes([0x90 | ch, pitch, 100])))
        timeline.append((end, 1, bytes([0x80 | ch, pitch, 0])))
    timeline.sort(key=lambda item: (item[0], item[1]))
    body = bytearray()
    prev = 0
    for tick, _, raw in timeline:
        body += encode_varlen(tick - prev) + raw
        prev = tick
    if end_of_track:
        body += b"\x00\xff\x2f\x00"
    return bytes(body)


def smf_from_notes(
    notes: Sequence[NoteSpec],
    *,
    division: int = 480,
    time_signature: tuple[int, int] | None = (4, 4),
) -> bytes:
    return header(0, 1, division) + chunk(b"MTrk", note_track_body(notes, time_signature=time_signature))


def random_phrase(rng: np.random.Generator, density: float = 0.05) -> PianoRollPhrase:
    cells = (rng.random((64, 84)) < density).astype(np.uint8)
    cells[0, 0] = 1
    return PianoRollPhrase(cells)


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    monkeypatch.delenv("MST_SEED", raising=False)
    monkeypatch.delenv("JSON_LOGS", raising=False)
    reset_settings_cache()
    yield
    reset_settings_cache()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture()
def midi_from_notes() -> Callable[..., bytes]:
    """Build SMF bytes by hand, independent of the writer under test."""
    return smf_from_notes


@pytest.fixture()
def smf_parts():
    """Low-level chunk builders for malformed-file tests."""
    return SimpleNamespace(chunk=chunk, header=header, note_track_body=note_track_body)


@pytest.fixture()
def phrase_factory() -> Callable[..., PianoRollPhrase]:
    return random_phrase


@pytest.fixture()
def toy_dataset(rng) -> LabeledDataset:
    negative = tuple(
        LabeledPhrase(phrase=random_phrase(rng), label=Sentiment.NEGATIVE, source_piece=f"neg{i // 2}", phrase_index=i % 2)
        for i in range(8)
    )
    positive = tuple(
        LabeledPhrase(phrase=random_phrase(rng), label=Sentiment.POSITIVE, source_piece=f"pos{i // 2}", phrase_index=i % 2)
        for i in range(8)
    )
    return LabeledDataset(
        negative=negative,
        positive=positive,
        mixed_pool=tuple(p.phrase for p in negative) + tuple(p.phrase for p in positive),
        seed=7,
    )


@pytest.fixture()
def tiny_config() -> TrainingConfig:
    return TrainingConfig(epochs=2, batch_size=4, base_filters=2, residual_blocks=1, checkpoint_every=1, seed=3)
