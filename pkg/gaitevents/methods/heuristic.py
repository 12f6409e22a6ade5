from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, Field

from gaitevents.core.events import DecodeFailure, EventPair
from gaitevents.core.signal import local_maxima, local_minima

if TYPE_CHECKING:
    import numpy.typing as npt

    from gaitevents.core.dataset import Step
    from gaitevents.core.signal import TimeSeries

__all__ = (
    'FailureReason',
    'MMethodDetector',
    'MMethodResult',
    'MMethodRules',
    'm_method',
)

log = logging.getLogger('gaitevents.heuristic')


class FailureReason(StrEnum):
    NO_PEAK = 'no-peak'
    NO_IC_MINIMUM = 'no-ic-minimum'
    NO_VALID_MAXIMUM = 'no-valid-maximum'
    NO_VALID_MINIMUM = 'no-valid-minimum'


class MMethodRules(BaseModel):
    """Timing rules applied after the axial peak, in milliseconds."""

    maxima_after_peak_ms: tuple[float, float] = (100.0, 300.0)
    maxima_separation_ms: float = Field(default=100.0, ge=0)
    minima_after_maximum_ms: tuple[float, float] = (20.0, 200.0)
    minima_separation_ms: float = Field(default=80.0, ge=0)


@dataclass(frozen=True, slots=True)
class MMethodResult:
    ic: int | None = None
    to: int | None = None
    failure_reason: FailureReason | None = None

    def __post_init__(self) -> None:
        if self.failure_reason is None and (self.ic is None or self.to is None):
            raise ValueError('a successful result needs both events')
        if self.ic is not None and self.to is not None and not self.ic < self.to:
            raise ValueError(f'initial contact {self.ic} must precede toe off {self.to}')

    @property
    def ok(self) -> bool:
        return self.failure_reason is None


def _samples(ms: float, sample_rate: int) -> int:
    return round(ms * sample_rate / 1000)


def _spaced(
    indices: npt.NDArray[np.intp],
    values: npt.NDArray[np.float64],
    separation: int,
    *,
    largest: bool,
) -> list[int]:
    """Keep the most prominent extrema at least ``separation`` samples apart, in time order.

    Candidates are visited from most to least prominent (earlier first on ties); a candidate closer
    than ``separation`` to an already kept one is dropped.
    """
    order = sorted(range(len(indices)), key=lambda k: (-values[indices[k]] if largest else values[indices[k]], indices[k]))
    kept: list[int] = []
    for k in order:
        index = int(indices[k])
        if all(abs(index - other) >= separation for other in kept):
            kept.append(index)
    return sorted(kept)


def m_method(axial_unfiltered: TimeSeries, rules: MMethodRules | None = None) -> MMethodResult:
    """Rule-based IC/TO detection from the unfiltered axial acceleration of the contacting leg.

    IC is the last local minimum before the axial peak. TO is the deepest local minimum
    20-200 ms after the second of the well-separated local maxima found 100-300 ms after the peak.
    """
    rules = rules or MMethodRules()
    x = axial_unfiltered.samples
    fs = axial_unfiltered.sample_rate

    peak = int(np.argmax(x))
    maxima = local_maxima(x)
    if peak not in maxima:
        return MMethodResult(failure_reason=FailureReason.NO_PEAK)

    minima = local_minima(x)
    before = minima[minima < peak]
    if before.size == 0:
        return MMethodResult(failure_reason=FailureReason.NO_IC_MINIMUM)
    ic = int(before[-1])

    lo, hi = (peak + _samples(ms, fs) for ms in rules.maxima_after_peak_ms)
    window = maxima[(maxima >= lo) & (maxima <= hi)]
    kept = _spaced(window, x, _samples(rules.maxima_separation_ms, fs), largest=True)
    if len(kept) < 2:
        return MMethodResult(ic=ic, failure_reason=FailureReason.NO_VALID_MAXIMUM)
    second = kept[1]

    lo, hi = (second + _samples(ms, fs) for ms in rules.minima_after_maximum_ms)
    window = minima[(minima >= lo) & (minima <= hi)]
    kept = _spaced(window, x, _samples(rules.minima_separation_ms, fs), largest=False)
    if not kept:
        return MMethodResult(ic=ic, failure_reason=FailureReason.NO_VALID_MINIMUM)
    to = min(kept, key=lambda index: (x[index], index))
    return MMethodResult(ic=ic, to=to)


class MMethodDetector:
    """Adapter running the M-method on a step's contacting-leg axial channel."""

    name = 'm_method'

    def __init__(self, rules: MMethodRules | None = None) -> None:
        self.rules = rules or MMethodRules()

    def predict(self, step: Step) -> EventPair | DecodeFailure:
        result = m_method(step.axial, self.rules)
        if result.failure_reason is not None or result.ic is None or result.to is None:
            return DecodeFailure(str(result.failure_reason))
        return EventPair(result.ic, result.to, step.sample_rate)
