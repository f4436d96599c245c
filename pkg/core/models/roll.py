from __future__ import annotations

from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_core import core_schema

from core.errors import InvariantViolation, ShapeMismatch
from core.schema import DEFAULT_PITCH_LOW, PHRASE_STEPS, PITCH_COUNT


class PianoRollPhrase:
    """One 64×84 binary piano-roll phrase (time steps × pitches).

    The matrix is copied on construction and made read-only; equality is cell
    equality. `to_tensor` gives the (1, 1, 64, 84) network input.
    """

    __slots__ = ("_cells",)

    def __init__(self, cells: Any) -> None:
        arr = np.asarray(cells)
        if arr.shape == (1, PHRASE_STEPS, PITCH_COUNT):
            arr = arr[0]
        if arr.shape != (PHRASE_STEPS, PITCH_COUNT):
            raise ShapeMismatch(f"phrase must be {PHRASE_STEPS}x{PITCH_COUNT}, got {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.all((arr == 0) | (arr == 1)):
                raise InvariantViolation("phrase cells must be 0 or 1")
            arr = arr.astype(np.uint8)
        elif arr.max(initial=0) > 1:
            raise InvariantViolation("phrase cells must be 0 or 1")
        arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
        arr.setflags(write=False)
        self._cells = arr

    @classmethod
    def zeros(cls) -> PianoRollPhrase:
        return cls(np.zeros((PHRASE_STEPS, PITCH_COUNT), dtype=np.uint8))

    @classmethod
    def from_bytes(cls, raw: bytes) -> PianoRollPhrase:
        return cls(np.frombuffer(raw, dtype=np.uint8).reshape(PHRASE_STEPS, PITCH_COUNT))

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    def to_bytes(self) -> bytes:
        return self._cells.tobytes(order="C")

    def to_tensor(self) -> np.ndarray:
        return self._cells.astype(np.float32).reshape(1, 1, PHRASE_STEPS, PITCH_COUNT)

    def density(self) -> float:
        return float(self._cells.mean(dtype=np.float64))

    def is_empty(self) -> bool:
        return not self._cells.any()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PianoRollPhrase):
            return NotImplemented
        return bool(np.array_equal(self._cells, other._cells))

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def __repr__(self) -> str:
        return f"PianoRollPhrase(on_cells={int(self._cells.sum())})"

    @classmethod
    def __get_pydantic_core_schema__(cls, source: Any, handler: Any) -> core_schema.CoreSchema:
        return core_schema.is_instance_schema(cls)


class QuantizedNote(BaseModel):
    model_config = ConfigDict(frozen=True)

    pitch: Annotated[int, Field(ge=0, le=127)]
    start_step: Annotated[int, Field(ge=0)]
    length_steps: Annotated[int, Field(ge=1)]

    @property
    def end_step(self) -> int:
        return self.start_step + self.length_steps


class ConversionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    pitch_low: Annotated[int, Field(ge=0, le=127)] = DEFAULT_PITCH_LOW
    pitch_count: Annotated[int, Field(ge=1, le=128)] = PITCH_COUNT
    require_four_four: bool = True
    emit_tempo_bpm: Annotated[float, Field(gt=0)] = 120.0
    emit_ppq: Annotated[int, Field(gt=0, le=0x7FFF)] = 480
    emit_velocity: Annotated[int, Field(ge=1, le=127)] = 100
    # upper bound on 64-step windows per piece; longer files are rejected before any roll is allocated
    max_windows: Annotated[int, Field(ge=1)] = 4096

    @model_validator(mode="after")
    def _check_ranges(self) -> ConversionConfig:
        if self.pitch_low + self.pitch_count > 128:
            raise ValueError("pitch_low + pitch_count must not exceed 128")
        if self.pitch_count != PITCH_COUNT:
            raise ValueError(f"pitch_count is fixed at {PITCH_COUNT}")
        if self.emit_ppq % 4:
            raise ValueError("emit_ppq must be divisible by 4 for an exact 16th-note grid")
        return self

    @property
    def pitch_high(self) -> int:
        """Exclusive upper pitch bound."""
        return self.pitch_low + self.pitch_count

    @property
    def ticks_per_step(self) -> int:
        return self.emit_ppq // 4


class PhraseExtraction(BaseModel):
    """Phrases of one piece plus window accounting for dataset reports."""

    model_config = ConfigDict(frozen=True)

    phrases: tuple[PianoRollPhrase, ...]
    window_indices: tuple[int, ...]
    total_windows: int
    empty_windows: int
    partial_steps_dropped: int
