from .dataset import DatasetMetadata, DatasetStats, LabeledDataset, LabeledPhrase, Sentiment, ValenceAnnotation
from .midi import (
    EndOfTrack,
    Event,
    MidiFile,
    NoteOff,
    NoteOn,
    OtherChannel,
    OtherMeta,
    Severity,
    SmfFormat,
    SysEx,
    Tempo,
    TimedEvent,
    TimeSignature,
    Track,
    ValidationIssue,
    ValidationReport,
)
from .roll import ConversionConfig, PhraseExtraction, PianoRollPhrase, QuantizedNote
from .training import HistoryRow, TrainingConfig

__all__ = [
    "ConversionConfig",
    "DatasetMetadata",
    "DatasetStats",
    "EndOfTrack",
    "Event",
    "HistoryRow",
    "LabeledDataset",
    "LabeledPhrase",
    "MidiFile",
    "NoteOff",
    "NoteOn",
    "OtherChannel",
    "OtherMeta",
    "PhraseExtraction",
    "PianoRollPhrase",
    "QuantizedNote",
    "Sentiment",
    "Severity",
    "SmfFormat",
    "SysEx",
    "Tempo",
    "TimeSignature",
    "TimedEvent",
    "Track",
    "TrainingConfig",
    "ValenceAnnotation",
    "ValidationIssue",
    "ValidationReport",
]
