from __future__ import annotations

import numpy as np
import pytest

hypothesis = pytest.importorskip("hypothesis")
st = pytest.importorskip("hypothesis.strategies")

from core.models.dataset import DatasetMetadata, LabeledDataset, LabeledPhrase, Sentiment
from core.models.roll import PianoRollPhrase
from core.services.dataset import decode_dataset, encode_dataset


@st.composite
def _phrases(draw) -> PianoRollPhrase:
    rng = np.random.default_rng(draw(st.integers(min_value=0, max_value=2**32 - 1)))
    density = draw(st.sampled_from([0.0, 0.01, 0.1, 0.5, 1.0]))
    return PianoRollPhrase((rng.random((64, 84)) < density).astype(np.uint8))


def _records(label: Sentiment):
    return st.builds(
        LabeledPhrase,
        phrase=_phrases(),
        label=st.just(label),
        source_piece=st.text(max_size=24),
        phrase_index=st.integers(min_value=0, max_value=0xFFFFFFFF),
    )


@st.composite
def _datasets(draw) -> LabeledDataset:
    negative = tuple(draw(st.lists(_records(Sentiment.NEGATIVE), max_size=6)))
    positive = tuple(draw(st.lists(_records(Sentiment.POSITIVE), max_size=6)))
    return LabeledDataset(
        negative=negative,
        positive=positive,
        mixed_pool=tuple(p.phrase for p in negative + positive),
        seed=draw(st.integers(min_value=0, max_value=2**64 - 1)),
    )


@hypothesis.settings(max_examples=100, deadline=None)
@hypothesis.given(ds=_datasets())
def test_random_datasets_survive_encode_decode(ds):
    data = encode_dataset(ds)
    decoded = decode_dataset(data)
    assert decoded == ds
    assert encode_dataset(decoded) == data


@hypothesis.settings(max_examples=25, deadline=None)
@hypothesis.given(ds=_datasets(), source=st.text(max_size=16))
def test_decode_attaches_given_metadata(ds, source):
    meta = DatasetMetadata(source=source, raw_negative=len(ds.negative))
    decoded = decode_dataset(encode_dataset(ds), meta)
    assert decoded.metadata == meta
    assert decoded.negative == ds.negative
    assert decoded.positive == ds.positive
