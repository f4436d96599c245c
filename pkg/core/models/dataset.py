from __future__ import annotations

from enum import IntEnum
from typing import Annotated, Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.models.roll import PianoRollPhrase


class Sentiment(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


class ValenceAnnotation(BaseModel):
    model_config = ConfigDict(frozen=True)

    piece_id: Annotated[str, Field(min_length=1)]
    valence_series: tuple[float, ...]

    @field_validator("valence_series")
    @classmethod
    def _check_series(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("valence series must not be empty")
        for v in value:
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"valence {v} outside [-1, 1]")
        return value


class LabeledPhrase(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    phrase: PianoRollPhrase
    label: Sentiment
    source_piece: str
    phrase_index: Annotated[int, Field(ge=0, le=0xFFFFFFFF)]


class DatasetMetadata(BaseModel):
    """Human-readable facts recorded next to the binary dataset file."""

    model_config = ConfigDict(frozen=True)

    source: str = ""
    config: dict[str, Any] = Field(default_factory=dict)
    files_read: int = 0
    files_rejected: int = 0
    raw_negative: int = 0
    raw_positive: int = 0
    empty_windows_dropped: int = 0


class LabeledDataset(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    negative: tuple[LabeledPhrase, ...]
    positive: tuple[LabeledPhrase, ...]
    mixed_pool: tuple[PianoRollPhrase, ...]
    seed: Annotated[int, Field(ge=0, le=2**64 - 1)]
    metadata: DatasetMetadata = Field(default_factory=DatasetMetadata)

    @model_validator(mode="after")
    def _check_labels(self) -> LabeledDataset:
        if any(p.label != Sentiment.NEGATIVE for p in self.negative):
            raise ValueError("negative class holds a non-negative phrase")
        if any(p.label != Sentiment.POSITIVE for p in self.positive):
            raise ValueError("positive class holds a non-positive phrase")
        return self

    @property
    def is_balanced(self) -> bool:
        return len(self.negative) == len(self.positive)

    def domain(self, label: Sentiment) -> tuple[LabeledPhrase, ...]:
        return self.negative if label == Sentiment.NEGATIVE else self.positive


class DatasetStats(BaseModel):
    counts: dict[str, int]
    raw_counts: dict[str, int]
    density: dict[str, float]
    mixed_density: float
    mixed_pool_size: int
    phrases_per_piece: dict[str, int]
    empty_windows_dropped: int = 0
