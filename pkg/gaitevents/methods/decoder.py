from __future__ import annotations

from typing import TYPE_CHECKING, NamedTuple, Self

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, Field, model_validator

from gaitevents.core.events import DecodeFailure, EventPair
from gaitevents.core.signal import local_maxima
from gaitevents.errors import RejectedInputError

if TYPE_CHECKING:
    import numpy.typing as npt

__all__ = (
    'IC_CHANNEL',
    'TO_CHANNEL',
    'DecodedPair',
    'TimingConstraints',
    'best_pair',
    'constrained_peak_decode',
)

type FloatArray = npt.NDArray[np.float64]

IC_CHANNEL = 0
TO_CHANNEL = 1
CONTRA_TO_CHANNEL = 2
CONTRA_IC_CHANNEL = 3


class TimingConstraints(BaseModel):
    """Admissible event separations in milliseconds, converted to samples when decoding."""

    same_foot_ic_to_min_ms: float = Field(default=160.0, gt=0)
    same_foot_ic_to_max_ms: float = Field(default=350.0, gt=0)
    opposing_min_ms: float = Field(default=35.0, gt=0)
    opposing_max_ms: float = Field(default=200.0, gt=0)

    @model_validator(mode='after')
    def _check_order(self) -> Self:
        if self.same_foot_ic_to_min_ms >= self.same_foot_ic_to_max_ms:
            raise ValueError('same-foot minimum must be below the maximum')
        if self.opposing_min_ms >= self.opposing_max_ms:
            raise ValueError('opposing-foot minimum must be below the maximum')
        return self

    def same_foot_samples(self, sample_rate: int) -> tuple[int, int]:
        return _samples(self.same_foot_ic_to_min_ms, sample_rate), _samples(self.same_foot_ic_to_max_ms, sample_rate)

    def opposing_samples(self, sample_rate: int) -> tuple[int, int]:
        return _samples(self.opposing_min_ms, sample_rate), _samples(self.opposing_max_ms, sample_rate)


class DecodedPair(NamedTuple):
    events: EventPair
    objective: float


class _NoAnchor(NamedTuple):
    ic_index: int | None = None
    to_index: int | None = None
    contra_to: int | None = None
    contra_ic: int | None = None


_NO_ANCHOR = _NoAnchor()


def _samples(ms: float, sample_rate: int) -> int:
    return round(ms * sample_rate / 1000)


def _window_best(values: FloatArray, lo: int, hi: int) -> tuple[FloatArray, npt.NDArray[np.intp]]:
    """For every position ``i``, the maximum of ``values[i + lo : i + hi + 1]`` and where it sits.

    Positions outside the series count as ``-inf``; ties go to the earliest index.
    """
    n = values.size
    pad = max(abs(lo), abs(hi))
    padded = np.concatenate([np.full(pad, -np.inf), values, np.full(pad, -np.inf)])
    windows = sliding_window_view(padded, hi - lo + 1)[pad + lo : pad + lo + n]
    offsets = np.argmax(windows, axis=1)
    best = windows[np.arange(n), offsets]
    return best, np.arange(n) + lo + offsets


def _candidates(channel: FloatArray, peaks_only: bool) -> FloatArray:
    if not peaks_only:
        return channel.copy()
    masked = np.full_like(channel, -np.inf)
    peaks = local_maxima(channel)
    masked[peaks] = channel[peaks]
    return masked


def _anchored(values: FloatArray, gold: int | None) -> FloatArray:
    if gold is None:
        return values
    return values + np.abs(np.arange(values.size) - gold)


def best_pair(
    scores: FloatArray,
    constraints: TimingConstraints | None = None,
    loss_anchor: EventPair | None = None,
    *,
    peaks_only: bool = True,
    sample_rate: int = 1000,
) -> DecodedPair | DecodeFailure:
    """Constraint-valid event pair with the highest (optionally loss-augmented) summed score.

    The objective of a pair ``(i, j)`` is ``a[i] + b[j]`` with ``a = scores[:, IC] + |i - gold_ic|`` and
    ``b = scores[:, TO] + |j - gold_to|``, the distance terms present only with ``loss_anchor``. With four
    channels ``a`` also takes the best opposite-foot toe off 35-200 ms before ``i`` and ``b`` the best
    opposite-foot contact 35-200 ms after ``j``. Ties go to the smallest IC index, then the smallest TO.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] not in (2, 4):
        raise RejectedInputError(f'scores must have 2 or 4 channels, got shape {scores.shape}')
    constraints = constraints or TimingConstraints()
    length = scores.shape[0]
    lo, hi = constraints.same_foot_samples(sample_rate)
    if length <= lo:
        return DecodeFailure(f'window of {length} samples is shorter than the minimum stance')

    anchor = loss_anchor or _NO_ANCHOR
    a = _anchored(_candidates(scores[:, IC_CHANNEL], peaks_only), anchor.ic_index)
    b = _anchored(_candidates(scores[:, TO_CHANNEL], peaks_only), anchor.to_index)

    contra_to_at = contra_ic_at = None
    if scores.shape[1] == 4:
        olo, ohi = constraints.opposing_samples(sample_rate)
        contra_to = _anchored(_candidates(scores[:, CONTRA_TO_CHANNEL], peaks_only), anchor.contra_to)
        contra_ic = _anchored(_candidates(scores[:, CONTRA_IC_CHANNEL], peaks_only), anchor.contra_ic)
        best_contra_to, contra_to_at = _window_best(contra_to, -ohi, -olo)
        best_contra_ic, contra_ic_at = _window_best(contra_ic, olo, ohi)
        a = a + best_contra_to
        b = b + best_contra_ic

    best_b, to_at = _window_best(b, lo, hi)
    total = a + best_b
    ic = int(np.argmax(total))
    objective = float(total[ic])
    if objective == -np.inf:
        return DecodeFailure('no event pair satisfies the timing constraints')

    to = int(to_at[ic])
    events = EventPair(
        ic_index=ic,
        to_index=to,
        sample_rate=sample_rate,
        contra_to=None if contra_to_at is None else int(contra_to_at[ic]),
        contra_ic=None if contra_ic_at is None else int(contra_ic_at[to]),
    )
    return DecodedPair(events, objective)


def constrained_peak_decode(
    scores: FloatArray,
    constraints: TimingConstraints | None = None,
    loss_anchor: EventPair | None = None,
    *,
    peaks_only: bool = True,
    sample_rate: int = 1000,
) -> EventPair | DecodeFailure:
    """Select the local maxima of the event channels that best satisfy the timing constraints.

    See :func:`best_pair` for the objective.
    """
    decoded = best_pair(scores, constraints, loss_anchor, peaks_only=peaks_only, sample_rate=sample_rate)
    if isinstance(decoded, DecodeFailure):
        return decoded
    return decoded.events
