from __future__ import annotations

import csv
import json
import logging
import struct
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from statistics import fmean

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from core.errors import (
    BadAnnotation,
    BadMagic,
    CorruptRecord,
    EmptyClass,
    IoFailure,
    MissingAnnotation,
    MstError,
    NotFourFour,
    VersionMismatch,
)
from core.models.dataset import (
    DatasetMetadata,
    DatasetStats,
    LabeledDataset,
    LabeledPhrase,
    Sentiment,
    ValenceAnnotation,
)
from core.models.roll import ConversionConfig, PhraseExtraction, PianoRollPhrase
from core.schema import DATASET_MAGIC, DATASET_SIDECAR_SUFFIX, DATASET_VERSION, PHRASE_CELLS
from core.utils.binary import ByteReader
from core.utils.files import atomic_write

from .midi_io import read_midi_file
from .pianoroll import extract_phrases, roll_density

logger = logging.getLogger("mst_core.dataset")

_HEADER = struct.Struct("<4sHIIQ")
_RECORD_TAIL = struct.Struct("<I")
MIDI_SUFFIXES = (".mid", ".midi")


def label_piece(annotation: ValenceAnnotation) -> Sentiment:
    """Positive iff the mean valence is >= 0."""
    return Sentiment.POSITIVE if fmean(annotation.valence_series) >= 0 else Sentiment.NEGATIVE


def build_dataset(
    pieces: Iterable[tuple[str, PhraseExtraction | Sequence[PianoRollPhrase]]],
    annotations: Iterable[ValenceAnnotation],
    seed: int,
    *,
    metadata: DatasetMetadata | None = None,
) -> LabeledDataset:
    """Label phrases per piece and downsample the larger class to the smaller.

    Pieces are processed in sorted piece_id order so the result depends only
    on the inputs and `seed`. For a `PhraseExtraction` each phrase keeps the
    index of the 64-step window it was cut from; a plain phrase sequence is
    numbered 0, 1, 2, ...
    """
    by_piece: dict[str, ValenceAnnotation] = {}
    for ann in annotations:
        by_piece[ann.piece_id] = ann

    negative: list[LabeledPhrase] = []
    positive: list[LabeledPhrase] = []
    for piece_id, phrases in sorted(pieces, key=lambda item: item[0]):
        ann = by_piece.get(piece_id)
        if ann is None:
            raise MissingAnnotation(piece_id)
        label = label_piece(ann)
        target = positive if label == Sentiment.POSITIVE else negative
        numbered: Iterable[tuple[int, PianoRollPhrase]]
        if isinstance(phrases, PhraseExtraction):
            numbered = zip(phrases.window_indices, phrases.phrases)
        else:
            numbered = enumerate(phrases)
        for index, phrase in numbered:
            target.append(LabeledPhrase(phrase=phrase, label=label, source_piece=piece_id, phrase_index=index))

    if not negative or not positive:
        raise EmptyClass(f"class sizes negative={len(negative)} positive={len(positive)}; both must be non-empty")

    raw_negative, raw_positive = len(negative), len(positive)
    rng = np.random.default_rng(seed)
    size = min(raw_negative, raw_positive)
    if raw_negative > size:
        keep = np.sort(rng.choice(raw_negative, size=size, replace=False))
        negative = [negative[i] for i in keep]
    elif raw_positive > size:
        keep = np.sort(rng.choice(raw_positive, size=size, replace=False))
        positive = [positive[i] for i in keep]

    meta = (metadata or DatasetMetadata()).model_copy(update={"raw_negative": raw_negative, "raw_positive": raw_positive})
    logger.info(
        "dataset balanced",
        extra={"count": size, "metrics": {"raw_negative": raw_negative, "raw_positive": raw_positive}},
    )
    return LabeledDataset(
        negative=tuple(negative),
        positive=tuple(positive),
        mixed_pool=tuple(p.phrase for p in negative) + tuple(p.phrase for p in positive),
        seed=seed,
        metadata=meta,
    )


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + DATASET_SIDECAR_SUFFIX)


def encode_dataset(ds: LabeledDataset) -> bytes:
    out = bytearray(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(ds.negative), len(ds.positive), ds.seed))
    for item in ds.negative + ds.positive:
        name = item.source_piece.encode("utf-8")
        if len(name) > 0xFFFF:
            raise CorruptRecord(f"piece id '{item.source_piece[:40]}…' longer than 65535 bytes")
        out += struct.pack("<BH", int(item.label), len(name)) + name
        out += _RECORD_TAIL.pack(item.phrase_index) + item.phrase.to_bytes()
    return bytes(out)


def decode_dataset(data: bytes, metadata: DatasetMetadata | None = None) -> LabeledDataset:
    reader = ByteReader(data, CorruptRecord)
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise BadMagic("not a PRDS dataset file", offset=0)
    if len(data) < _HEADER.size:
        raise CorruptRecord("header truncated", offset=len(data))
    _, version, n_neg, n_pos, seed = reader.unpack(_HEADER.format)
    if version != DATASET_VERSION:
        raise VersionMismatch(f"dataset version {version}, expected {DATASET_VERSION}", offset=4)

    classes: list[list[LabeledPhrase]] = [[], []]
    for index in range(n_neg + n_pos):
        record_offset = reader.pos
        expected = Sentiment.NEGATIVE if index < n_neg else Sentiment.POSITIVE
        label_byte, name_len = reader.unpack("<BH")
        if label_byte != expected:
            raise CorruptRecord(f"record {index} has label {label_byte}, expected {int(expected)}", offset=record_offset)
        try:
            name = reader.take(name_len, "piece id bytes").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptRecord(f"record {index} piece id is not UTF-8", offset=record_offset) from exc
        (phrase_index,) = reader.unpack(_RECORD_TAIL.format)
        cells = np.frombuffer(reader.take(PHRASE_CELLS, "cell bytes"), dtype=np.uint8)
        if cells.max(initial=0) > 1:
            raise CorruptRecord(f"record {index} has cell values other than 0/1", offset=record_offset)
        classes[int(expected)].append(
            LabeledPhrase(
                phrase=PianoRollPhrase.from_bytes(cells.tobytes()),
                label=expected,
                source_piece=name,
                phrase_index=phrase_index,
            )
        )
    if not reader.at_end():
        raise CorruptRecord(f"{reader.remaining} unexpected bytes after the last record", offset=reader.pos)
    negative, positive = tuple(classes[0]), tuple(classes[1])
    return LabeledDataset(
        negative=negative,
        positive=positive,
        mixed_pool=tuple(p.phrase for p in negative) + tuple(p.phrase for p in positive),
        seed=seed,
        metadata=metadata or DatasetMetadata(),
    )


def save_dataset(ds: LabeledDataset, path: str | Path) -> Path:
    """Write the binary dataset plus its `.meta.json` sidecar."""
    target = Path(path)
    sidecar = {
        "format": "PRDS",
        "version": DATASET_VERSION,
        "seed": ds.seed,
        "counts": {"negative": len(ds.negative), "positive": len(ds.positive), "mixed_pool": len(ds.mixed_pool)},
        "metadata": ds.metadata.model_dump(mode="json"),
    }
    try:
        atomic_write(target, encode_dataset(ds))
        atomic_write(sidecar_path(target), json.dumps(sidecar, ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot write dataset {target}: {exc}") from exc
    return target


def load_dataset(path: str | Path) -> LabeledDataset:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {target}: {exc}") from exc
    metadata: DatasetMetadata | None = None
    meta_file = sidecar_path(target)
    if meta_file.exists():
        try:
            raw = json.loads(meta_file.read_text(encoding="utf-8"))
            metadata = DatasetMetadata.model_validate(raw.get("metadata") or {})
        except (OSError, ValueError, ValidationError) as exc:
            logger.warning("ignoring unreadable sidecar %s: %s", meta_file, exc)
    else:
        logger.warning("dataset sidecar %s missing; metadata left empty", meta_file)
    return decode_dataset(data, metadata)


def dataset_stats(ds: LabeledDataset) -> DatasetStats:
    per_piece: Counter[str] = Counter()
    for item in ds.negative + ds.positive:
        per_piece[item.source_piece] += 1
    return DatasetStats(
        counts={"negative": len(ds.negative), "positive": len(ds.positive)},
        raw_counts={"negative": ds.metadata.raw_negative, "positive": ds.metadata.raw_positive},
        density={
            "negative": roll_density([p.phrase for p in ds.negative]),
            "positive": roll_density([p.phrase for p in ds.positive]),
        },
        mixed_density=roll_density(ds.mixed_pool),
        mixed_pool_size=len(ds.mixed_pool),
        phrases_per_piece=dict(sorted(per_piece.items())),
        empty_windows_dropped=ds.metadata.empty_windows_dropped,
    )


def _parse_float(text: str, line: int) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise BadAnnotation(f"line {line}: '{text}' is not a number") from exc


def load_annotations(path: str | Path) -> list[ValenceAnnotation]:
    """Read valence annotations from a delimited text file.

    Two layouts are accepted:

    - `piece_id,valence_0,...,valence_n` with variable-length rows, one row per piece;
    - a VGMIDI-style label table with `midi` and `valence` columns, where the
      piece id is the MIDI filename stem and repeated rows extend the series.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read annotations {path}: {exc}") from exc
    if not rows:
        raise BadAnnotation("annotation file is empty")
    header = [h.strip().lower() for h in rows[0]]
    series: dict[str, list[float]] = {}
    if header and header[0] == "piece_id":
        for line, row in enumerate(rows[1:], start=2):
            cells = [c.strip() for c in row if c.strip() != ""]
            if not cells:
                continue
            piece_id, values = cells[0], cells[1:]
            if not values:
                raise BadAnnotation(f"line {line}: piece '{piece_id}' has no valence values")
            series.setdefault(piece_id, []).extend(_parse_float(v, line) for v in values)
    elif "midi" in header and "valence" in header:
        midi_col, val_col = header.index("midi"), header.index("valence")
        for line, row in enumerate(rows[1:], start=2):
            if len(row) <= max(midi_col, val_col) or not row[midi_col].strip():
                continue
            piece_id = Path(row[midi_col].strip()).stem
            series.setdefault(piece_id, []).append(_parse_float(row[val_col].strip(), line))
    else:
        raise BadAnnotation("header must start with 'piece_id' or contain 'midi' and 'valence' columns")
    out: list[ValenceAnnotation] = []
    for piece_id, values in series.items():
        try:
            out.append(ValenceAnnotation(piece_id=piece_id, valence_series=tuple(values)))
        except ValidationError as exc:
            raise BadAnnotation(f"piece '{piece_id}': {exc.errors()[0].get('msg', 'invalid')}") from exc
    return out


class CorpusConversion(BaseModel):
    """Per-piece phrase extraction for a MIDI directory, sorted by piece id."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pieces: tuple[tuple[str, PhraseExtraction], ...]
    files_read: int
    rejected_non_four_four: tuple[str, ...]
    rejected_unparsable: tuple[tuple[str, str], ...]

    @property
    def files_rejected(self) -> int:
        return len(self.rejected_non_four_four) + len(self.rejected_unparsable)

    @property
    def empty_windows(self) -> int:
        return sum(ex.empty_windows for _, ex in self.pieces)


def _convert_one(path: Path, cfg: ConversionConfig) -> tuple[str, PhraseExtraction | MstError]:
    try:
        return path.stem, extract_phrases(read_midi_file(path), cfg)
    except MstError as exc:
        return path.stem, exc


def convert_corpus(midi_dir: str | Path, cfg: ConversionConfig | None = None, *, workers: int = 4) -> CorpusConversion:
    """Parse and convert every MIDI file below `midi_dir`.

    Files are converted concurrently; results are merged in sorted piece-id
    order so the outcome does not depend on scheduling.
    """
    cfg = cfg or ConversionConfig()
    root = Path(midi_dir)
    if not root.is_dir():
        raise IoFailure(f"{root} is not a directory")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in MIDI_SUFFIXES)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda p: _convert_one(p, cfg), files))

    pieces: list[tuple[str, PhraseExtraction]] = []
    non_four_four: list[str] = []
    unparsable: list[tuple[str, str]] = []
    seen: set[str] = set()
    for (piece_id, outcome), path in sorted(zip(results, files), key=lambda item: item[0][0]):
        if piece_id in seen:
            raise BadAnnotation(f"duplicate piece id '{piece_id}' ({path})")
        seen.add(piece_id)
        if isinstance(outcome, NotFourFour):
            non_four_four.append(piece_id)
            logger.info("rejected non-4/4 file", extra={"path": str(path)})
        elif isinstance(outcome, MstError):
            unparsable.append((piece_id, str(outcome)))
            logger.warning("rejected unreadable file %s: %s", path, outcome, extra={"path": str(path), "code": outcome.code})
        else:
            pieces.append((piece_id, outcome))
    return CorpusConversion(
        pieces=tuple(pieces),
        files_read=len(files),
        rejected_non_four_four=tuple(non_four_four),
        rejected_unparsable=tuple(unparsable),
    )
