from __future__ import annotations

import json

import numpy as np
import pytest

from core.errors import (
    BadAnnotation,
    BadMagic,
    CorruptRecord,
    EmptyClass,
    IoFailure,
    MissingAnnotation,
    VersionMismatch,
)
from core.models.dataset import DatasetMetadata, Sentiment, ValenceAnnotation
from core.services.dataset import (
    build_dataset,
    convert_corpus,
    dataset_stats,
    decode_dataset,
    encode_dataset,
    label_piece,
    load_annotations,
    load_dataset,
    save_dataset,
    sidecar_path,
)

HEADER_SIZE = 22


def _ann(piece_id: str, *values: float) -> ValenceAnnotation:
    return ValenceAnnotation(piece_id=piece_id, valence_series=values)


def test_label_is_sign_of_mean_valence():
    assert label_piece(_ann("p", 0.5, -0.5)) == Sentiment.POSITIVE
    assert label_piece(_ann("p", -0.2, 0.1)) == Sentiment.NEGATIVE
    assert label_piece(_ann("p", 0.0)) == Sentiment.POSITIVE


def test_annotation_range_is_checked():
    with pytest.raises(ValueError):
        _ann("p", 1.5)
    with pytest.raises(ValueError):
        _ann("p")


def test_build_balances_by_downsampling(phrase_factory, rng):
    sad = [phrase_factory(rng) for _ in range(5)]
    happy = [phrase_factory(rng) for _ in range(2)]
    pieces = [("happy", happy), ("sad", sad)]
    annotations = [_ann("sad", -0.8), _ann("happy", 0.4, 0.2)]
    ds = build_dataset(pieces, annotations, seed=11)
    assert ds.is_balanced
    assert len(ds.negative) == len(ds.positive) == 2
    assert [p.phrase for p in ds.positive] == happy
    kept = [p.phrase_index for p in ds.negative]
    assert kept == sorted(kept)
    assert all(ds.negative[i].phrase == sad[idx] for i, idx in enumerate(kept))
    assert ds.mixed_pool == tuple(p.phrase for p in ds.negative + ds.positive)
    assert ds.metadata.raw_negative == 5 and ds.metadata.raw_positive == 2


def test_build_is_deterministic_for_a_seed(phrase_factory, rng):
    pieces = [("a", [phrase_factory(rng) for _ in range(9)]), ("b", [phrase_factory(rng) for _ in range(3)])]
    annotations = [_ann("a", -0.3), _ann("b", 0.3)]
    first = build_dataset(pieces, annotations, seed=5)
    again = build_dataset(list(reversed(pieces)), annotations, seed=5)
    assert first == again


def test_phrase_index_is_the_source_window(tmp_path, midi_from_notes):
    # window 1 is silent, so the second phrase comes from window 2
    notes = [(0, 480, 60), (128 * 120, 129 * 120, 62), (191 * 120, 192 * 120, 64)]
    (tmp_path / "gap.mid").write_bytes(midi_from_notes(notes))
    extraction = dict(convert_corpus(tmp_path, workers=1).pieces)["gap"]
    assert extraction.window_indices == (0, 2)

    happy = [extraction.phrases[0]] * 2
    ds = build_dataset([("gap", extraction), ("happy", happy)], [_ann("gap", -0.5), _ann("happy", 0.5)], seed=0)
    assert [p.phrase_index for p in ds.negative] == [0, 2]
    assert [p.phrase_index for p in ds.positive] == [0, 1]
    assert decode_dataset(encode_dataset(ds)).negative[1].phrase_index == 2


def test_missing_annotation(phrase_factory, rng):
    with pytest.raises(MissingAnnotation) as info:
        build_dataset([("a", [phrase_factory(rng)])], [_ann("b", 0.1)], seed=0)
    assert info.value.piece_id == "a"


def test_one_class_only_is_rejected(phrase_factory, rng):
    pieces = [("a", [phrase_factory(rng)]), ("b", [phrase_factory(rng)])]
    with pytest.raises(EmptyClass):
        build_dataset(pieces, [_ann("a", 0.2), _ann("b", 0.9)], seed=0)


def test_encode_decode_roundtrip(toy_dataset):
    data = encode_dataset(toy_dataset)
    decoded = decode_dataset(data)
    assert decoded == toy_dataset
    assert encode_dataset(decoded) == data


def test_encoded_header_layout(toy_dataset):
    data = encode_dataset(toy_dataset)
    assert data[:4] == b"PRDS"
    assert int.from_bytes(data[4:6], "little") == 1
    assert int.from_bytes(data[6:10], "little") == 8
    assert int.from_bytes(data[10:14], "little") == 8
    assert int.from_bytes(data[14:22], "little") == 7
    record = 1 + 2 + len("neg0") + 4 + 64 * 84
    assert len(data) == HEADER_SIZE + 16 * record


def test_decode_bad_magic(toy_dataset):
    data = bytearray(encode_dataset(toy_dataset))
    data[:4] = b"MSTC"
    with pytest.raises(BadMagic):
        decode_dataset(bytes(data))


def test_decode_version_mismatch(toy_dataset):
    data = bytearray(encode_dataset(toy_dataset))
    data[4:6] = (2).to_bytes(2, "little")
    with pytest.raises(VersionMismatch):
        decode_dataset(bytes(data))


@pytest.mark.parametrize(
    "corrupt",
    [
        lambda d: d[:-1],
        lambda d: d + b"\x00",
        lambda d: d[:10],
        lambda d: d[:HEADER_SIZE] + b"\x01" + d[HEADER_SIZE + 1 :],
        lambda d: d[:33] + b"\x02" + d[34:],
    ],
    ids=["truncated", "trailing", "short-header", "wrong-label", "bad-cell"],
)
def test_decode_corruption(toy_dataset, corrupt):
    with pytest.raises(CorruptRecord):
        decode_dataset(corrupt(encode_dataset(toy_dataset)))


def test_save_and_load_with_sidecar(toy_dataset, tmp_path):
    ds = toy_dataset.model_copy(update={"metadata": DatasetMetadata(source="corpus", files_read=3, raw_negative=9)})
    path = save_dataset(ds, tmp_path / "toy.prds")
    sidecar = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    assert sidecar["counts"] == {"negative": 8, "positive": 8, "mixed_pool": 16}
    assert sidecar["seed"] == 7
    loaded = load_dataset(path)
    assert loaded.metadata.source == "corpus"
    assert loaded.metadata.raw_negative == 9
    assert loaded == ds
    assert path.read_bytes() == encode_dataset(loaded)


def test_load_without_sidecar(toy_dataset, tmp_path):
    path = tmp_path / "toy.prds"
    path.write_bytes(encode_dataset(toy_dataset))
    loaded = load_dataset(path)
    assert loaded.metadata == DatasetMetadata()
    with pytest.raises(IoFailure):
        load_dataset(tmp_path / "missing.prds")


def test_dataset_stats(toy_dataset):
    stats = dataset_stats(toy_dataset)
    assert stats.counts == {"negative": 8, "positive": 8}
    assert stats.mixed_pool_size == 16
    assert stats.phrases_per_piece["neg0"] == 2
    assert len(stats.phrases_per_piece) == 8
    expected = np.mean([p.phrase.density() for p in toy_dataset.negative])
    assert stats.density["negative"] == pytest.approx(expected)


def test_load_annotations_row_layout(tmp_path):
    path = tmp_path / "ann.csv"
    path.write_text("piece_id,valence\nsong_a,0.5,-0.1,0.2\nsong_b,-0.9\n\n", encoding="utf-8")
    anns = {a.piece_id: a for a in load_annotations(path)}
    assert anns["song_a"].valence_series == (0.5, -0.1, 0.2)
    assert label_piece(anns["song_b"]) == Sentiment.NEGATIVE


def test_load_annotations_label_table(tmp_path):
    path = tmp_path / "vgmidi.csv"
    path.write_text(
        "id,midi,valence,arousal\n1,pieces/zelda_1.mid,1,0\n2,pieces/zelda_1.mid,-1,0\n3,pieces/doom.mid,-1,1\n",
        encoding="utf-8",
    )
    anns = {a.piece_id: a for a in load_annotations(path)}
    assert anns["zelda_1"].valence_series == (1.0, -1.0)
    assert anns["doom"].valence_series == (-1.0,)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "name,score\na,1\n",
        "piece_id\nsong_a,abc\n",
        "piece_id\nsong_a,2.5\n",
        "piece_id\nsong_a\n",
    ],
    ids=["empty", "unknown-header", "not-a-number", "out-of-range", "no-values"],
)
def test_load_annotations_rejects_bad_files(tmp_path, text):
    path = tmp_path / "ann.csv"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(BadAnnotation):
        load_annotations(path)


def test_load_annotations_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        load_annotations(tmp_path / "nope.csv")


def test_convert_corpus(tmp_path, midi_from_notes):
    (tmp_path / "nested").mkdir()
    (tmp_path / "waltz.mid").write_bytes(midi_from_notes([(0, 480, 60)], time_signature=(3, 4)))
    (tmp_path / "broken.mid").write_bytes(b"not midi at all")
    (tmp_path / "march.mid").write_bytes(midi_from_notes([(0, 480, 60), (64 * 120, 65 * 120, 62)]))
    (tmp_path / "nested" / "hymn.MIDI").write_bytes(midi_from_notes([(0, 240, 70)]))
    (tmp_path / "notes.txt").write_text("ignored", encoding="utf-8")

    result = convert_corpus(tmp_path, workers=2)
    assert result.files_read == 4
    assert result.rejected_non_four_four == ("waltz",)
    assert [pid for pid, _ in result.rejected_unparsable] == ["broken"]
    assert result.files_rejected == 2
    assert [pid for pid, _ in result.pieces] == ["hymn", "march"]
    march = dict(result.pieces)["march"]
    assert len(march.phrases) == 1
    assert march.window_indices == (0,)


def test_convert_corpus_rejects_overlong_piece(tmp_path, smf_parts, midi_from_notes):
    body = b"\x00\x90\x3c\x64" + b"\xff\xff\xff\x7f\x80\x3c\x00" + b"\x00\xff\x2f\x00"
    (tmp_path / "endless.mid").write_bytes(smf_parts.header(0, 1, 1) + smf_parts.chunk(b"MTrk", body))
    (tmp_path / "march.mid").write_bytes(midi_from_notes([(0, 480, 60)]))

    result = convert_corpus(tmp_path, workers=2)
    assert [pid for pid, _ in result.pieces] == ["march"]
    ((piece_id, reason),) = result.rejected_unparsable
    assert piece_id == "endless"
    assert "phrase windows" in reason


def test_convert_corpus_requires_directory(tmp_path):
    with pytest.raises(IoFailure):
        convert_corpus(tmp_path / "absent")
