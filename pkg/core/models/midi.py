from __future__ import annotations

from enum import Enum, IntEnum
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

Channel = Annotated[int, Field(ge=0, le=15)]
SevenBit = Annotated[int, Field(ge=0, le=127)]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class NoteOn(_Frozen):
    kind: Literal["note_on"] = "note_on"
    channel: Channel
    pitch: SevenBit
    velocity: SevenBit


class NoteOff(_Frozen):
    kind: Literal["note_off"] = "note_off"
    channel: Channel
    pitch: SevenBit
    velocity: SevenBit = 0


class Tempo(_Frozen):
    kind: Literal["tempo"] = "tempo"
    us_per_quarter: Annotated[int, Field(gt=0, le=0xFFFFFF)]

    @property
    def bpm(self) -> float:
        return 60_000_000 / self.us_per_quarter


class TimeSignature(_Frozen):
    kind: Literal["time_signature"] = "time_signature"
    numerator: Annotated[int, Field(ge=1, le=255)]
    denominator: int
    clocks_per_click: Annotated[int, Field(ge=0, le=255)] = 24
    notated_32nds: Annotated[int, Field(ge=0, le=255)] = 8

    @field_validator("denominator")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 1 or value & (value - 1) or value > 2**255:
            raise ValueError("denominator must be a power of two")
        return value

    def is_four_four(self) -> bool:
        return self.numerator == 4 and self.denominator == 4


class EndOfTrack(_Frozen):
    kind: Literal["end_of_track"] = "end_of_track"


class OtherMeta(_Frozen):
    kind: Literal["other_meta"] = "other_meta"
    meta_type: SevenBit
    data: bytes = b""


class OtherChannel(_Frozen):
    """Channel message other than note on/off (control change, pitch bend, ...)."""

    kind: Literal["other_channel"] = "other_channel"
    status: Annotated[int, Field(ge=0xA0, le=0xEF)]
    data: bytes

    @property
    def channel(self) -> int:
        return self.status & 0x0F


class SysEx(_Frozen):
    kind: Literal["sysex"] = "sysex"
    status: Literal[0xF0, 0xF7] = 0xF0
    data: bytes = b""


Event = Annotated[
    Union[NoteOn, NoteOff, Tempo, TimeSignature, EndOfTrack, OtherMeta, OtherChannel, SysEx],
    Field(discriminator="kind"),
]

CHANNEL_EVENTS = (NoteOn, NoteOff, OtherChannel)
META_EVENTS = (Tempo, TimeSignature, EndOfTrack, OtherMeta)


def event_channel(event: object) -> int | None:
    if isinstance(event, CHANNEL_EVENTS):
        return event.channel
    return None


class TimedEvent(_Frozen):
    tick: Annotated[int, Field(ge=0)]
    event: Event


class Track(_Frozen):
    events: tuple[TimedEvent, ...] = ()

    def invariant_issues(self) -> list[str]:
        issues: list[str] = []
        if not self.events or not isinstance(self.events[-1].event, EndOfTrack):
            issues.append("track does not end with EndOfTrack")
        prev = 0
        for i, te in enumerate(self.events):
            if te.tick < prev:
                issues.append(f"event {i} at tick {te.tick} precedes tick {prev}")
                break
            prev = te.tick
        return issues

    @property
    def last_tick(self) -> int:
        return self.events[-1].tick if self.events else 0


class SmfFormat(IntEnum):
    SINGLE = 0
    MULTI_TRACK = 1


class MidiFile(_Frozen):
    format: SmfFormat
    division: Annotated[int, Field(gt=0, le=0x7FFF)]
    tracks: tuple[Track, ...]

    def invariant_issues(self) -> list[str]:
        issues: list[str] = []
        if not self.tracks:
            issues.append("file has no tracks")
        if self.format == SmfFormat.SINGLE and len(self.tracks) != 1:
            issues.append(f"format 0 requires exactly one track, got {len(self.tracks)}")
        for i, track in enumerate(self.tracks):
            issues.extend(f"track {i}: {msg}" for msg in track.invariant_issues())
        return issues


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class ValidationIssue(_Frozen):
    severity: Severity
    code: str
    offset: int | None = None
    message: str = ""


class ValidationReport(_Frozen):
    issues: tuple[ValidationIssue, ...] = ()

    @computed_field  # type: ignore[prop-decorator]
    @property
    def is_valid(self) -> bool:
        return not any(i.severity == Severity.ERROR for i in self.issues)

    def has(self, code: str) -> bool:
        return any(i.code == code for i in self.issues)

    @property
    def errors(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == Severity.ERROR]

    @property
    def warnings(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == Severity.WARNING]
