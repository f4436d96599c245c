from __future__ import annotations

from typing import Optional


class MstError(ValueError):
    """Base error for every typed failure raised by the core package.

    `code` is a stable identifier surfaced by the CLI and validation reports;
    `offset` is the byte position for binary-format errors when known.
    """

    code = "error"
    path: Optional[str] = None

    def __init__(self, message: str = "", *, offset: Optional[int] = None, code: Optional[str] = None) -> None:
        super().__init__(message or self.code)
        self.message = message or self.code
        self.offset = offset
        if code:
            self.code = code

    def __str__(self) -> str:
        if self.offset is not None:
            return f"{self.code}: {self.message} (offset {self.offset})"
        return f"{self.code}: {self.message}"

    def at(self, path: object) -> MstError:
        """Attach the file the error refers to; returns self for `raise exc.at(path)`."""
        if self.path is None:
            self.path = str(path)
        return self


class InvariantViolation(MstError):
    code = "InvariantViolation"


# --- midi_io ---------------------------------------------------------------


class MidiFormatError(MstError):
    code = "MidiFormatError"


class MalformedHeader(MidiFormatError):
    code = "MalformedHeader"


class TruncatedTrack(MidiFormatError):
    code = "TruncatedTrack"


class BadVarLen(MidiFormatError):
    code = "BadVarLen"


class UnsupportedFormat(MidiFormatError):
    code = "UnsupportedFormat"


class SmpteDivision(MidiFormatError):
    code = "SmpteDivision"


class InvalidEvent(MidiFormatError):
    code = "InvalidEvent"


# --- pianoroll -------------------------------------------------------------


class ConversionError(MstError):
    code = "ConversionError"


class NotFourFour(ConversionError):
    code = "NotFourFour"


class EmptyInput(ConversionError):
    code = "EmptyInput"


class NonFiniteInput(ConversionError):
    code = "NonFiniteInput"


class PieceTooLong(ConversionError):
    code = "PieceTooLong"


# --- dataset ---------------------------------------------------------------


class DatasetError(MstError):
    code = "DatasetError"


class MissingAnnotation(DatasetError):
    code = "MissingAnnotation"

    def __init__(self, piece_id: str) -> None:
        super().__init__(f"no valence annotation for piece '{piece_id}'")
        self.piece_id = piece_id


class EmptyClass(DatasetError):
    code = "EmptyClass"


class BadAnnotation(DatasetError):
    code = "BadAnnotation"


class IoFailure(MstError):
    code = "IoFailure"


class BadMagic(MstError):
    code = "BadMagic"


class VersionMismatch(MstError):
    code = "VersionMismatch"


class CorruptRecord(DatasetError):
    code = "CorruptRecord"


# --- neural ----------------------------------------------------------------


class TensorError(MstError):
    code = "TensorError"


class ShapeMismatch(TensorError):
    code = "ShapeMismatch"


class DegenerateSpatial(TensorError):
    code = "DegenerateSpatial"


class NonFiniteTensor(TensorError):
    code = "NonFiniteTensor"

    def __init__(self, message: str = "", *, op: Optional[str] = None, component: Optional[str] = None) -> None:
        super().__init__(message)
        self.op = op
        self.component = component


# --- training / checkpoints -------------------------------------------------


class TrainingError(MstError):
    code = "TrainingError"


class EmptyDataset(TrainingError):
    code = "EmptyDataset"


class NonFiniteLoss(TrainingError):
    code = "NonFiniteLoss"

    def __init__(self, component: str, *, epoch: int, batch: int, value: float, op: Optional[str] = None) -> None:
        where = f" (raised by {op})" if op else ""
        super().__init__(f"loss component '{component}' is {value} at epoch {epoch}, batch {batch}{where}")
        self.op = op
        self.component = component
        self.epoch = epoch
        self.batch = batch


class CheckpointError(MstError):
    code = "CheckpointError"
