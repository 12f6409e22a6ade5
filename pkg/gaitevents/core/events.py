from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

from gaitevents.errors import RejectedInputError

__all__ = (
    'DecodeFailure',
    'EventKind',
    'EventPair',
    'Foot',
    'GaitEvent',
)


class EventKind(StrEnum):
    IC = 'IC'
    TO = 'TO'


class Foot(StrEnum):
    LEFT = 'left'
    RIGHT = 'right'

    @property
    def opposite(self) -> Foot:
        return Foot.RIGHT if self is Foot.LEFT else Foot.LEFT


@dataclass(frozen=True, slots=True)
class GaitEvent:
    kind: EventKind
    foot: Foot
    index: int
    sample_rate: int

    @property
    def time(self) -> float:
        """Event time in seconds."""
        return self.index / self.sample_rate


@dataclass(frozen=True, slots=True)
class EventPair:
    """Ipsilateral initial contact and toe off of one step, as sample indices.

    ``contra_to`` and ``contra_ic`` are filled only by decoders that also place the opposite foot's
    toe off before the contact and initial contact after the toe off.
    """

    ic_index: int
    to_index: int
    sample_rate: int = 1000
    contra_to: int | None = None
    contra_ic: int | None = None

    def __post_init__(self) -> None:
        if not self.ic_index < self.to_index:
            raise RejectedInputError(f'initial contact {self.ic_index} must precede toe off {self.to_index}')

    @property
    def stance_samples(self) -> int:
        return self.to_index - self.ic_index

    @property
    def stance_time(self) -> float:
        """Stance time in seconds."""
        return self.stance_samples / self.sample_rate

    def shifted(self, offset: int) -> EventPair:
        """The same events expressed with ``offset`` added to every index."""
        return EventPair(
            ic_index=self.ic_index + offset,
            to_index=self.to_index + offset,
            sample_rate=self.sample_rate,
            contra_to=None if self.contra_to is None else self.contra_to + offset,
            contra_ic=None if self.contra_ic is None else self.contra_ic + offset,
        )


@dataclass(frozen=True, slots=True)
class DecodeFailure:
    """A prediction that could not produce a valid event pair; counted as a failed step."""

    reason: str

    def __bool__(self) -> bool:
        return False
