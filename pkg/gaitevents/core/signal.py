from __future__ import annotations

from dataclasses import dataclass, field
from functools import cache
from typing import TYPE_CHECKING, Literal

import numpy as np
from scipy import signal as sps

from gaitevents.errors import RejectedInputError

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

__all__ = (
    'BiquadCascade',
    'TimeSeries',
    'derivative',
    'design_butterworth',
    'filt_zero_phase',
    'local_maxima',
    'local_minima',
    'peak_min_label',
    'resultant',
    'roll_pitch',
    'standardize',
)

type FloatArray = npt.NDArray[np.float64]
type FilterKind = Literal['lowpass', 'bandpass']

DEFAULT_SAMPLE_RATE = 1000
STD_EPSILON = 1e-12


@dataclass(frozen=True, slots=True, eq=False)
class TimeSeries:
    """A uniformly sampled, finite, read-only real series."""

    samples: FloatArray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise RejectedInputError(f'a time series needs at least one sample, got shape {samples.shape}')
        if not np.all(np.isfinite(samples)):
            raise RejectedInputError('time series samples must be finite')
        if self.sample_rate <= 0:
            raise RejectedInputError(f'sample rate must be positive, got {self.sample_rate}')
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self) / self.sample_rate

    def replace(self, samples: npt.ArrayLike) -> TimeSeries:
        """Return a series at the same rate holding ``samples``."""
        return TimeSeries(np.asarray(samples, dtype=np.float64), self.sample_rate)


@dataclass(frozen=True, slots=True, eq=False)
class BiquadCascade:
    """Second-order sections ``[b0, b1, b2, 1, a1, a2]`` plus the design that produced them."""

    sos: FloatArray
    kind: FilterKind
    cutoffs: tuple[float, ...]
    sample_rate: int
    design_order: int = field(default=2)

    def __post_init__(self) -> None:
        sos = np.array(self.sos, dtype=np.float64)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise RejectedInputError(f'second-order sections must have shape (n, 6), got {sos.shape}')
        if not np.allclose(sos[:, 3], 1.0):
            raise RejectedInputError('section denominators must be normalized to a0 = 1')
        for section in sos:
            poles = np.roots(section[3:])
            if np.any(np.abs(poles) >= 1.0 - 1e-9):
                raise RejectedInputError(f'unstable section, pole magnitudes {np.abs(poles)}')
        sos.setflags(write=False)
        object.__setattr__(self, 'sos', sos)

    @property
    def order(self) -> int:
        """Order of the whole cascade (two per section)."""
        return 2 * int(self.sos.shape[0])

    @property
    def padlen(self) -> int:
        """Edge padding used by zero-phase filtering."""
        return 3 * (self.order + 1)

    def poles(self) -> npt.NDArray[np.complex128]:
        return np.concatenate([np.roots(section[3:]) for section in self.sos])


@cache
def _butter_sos(kind: FilterKind, cutoffs: tuple[float, ...], order: int, sample_rate: int) -> BiquadCascade:
    sos = sps.butter(order, cutoffs if kind == 'bandpass' else cutoffs[0], btype=kind, fs=sample_rate, output='sos')
    return BiquadCascade(sos=sos, kind=kind, cutoffs=cutoffs, sample_rate=sample_rate, design_order=order)


def design_butterworth(
    kind: FilterKind,
    cutoffs: Sequence[float],
    order: int = 2,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> BiquadCascade:
    """Design a digital Butterworth filter by the prewarped bilinear transform.

    Parameters
    ----------
    kind : {'lowpass', 'bandpass'}
        Filter type.
    cutoffs : Sequence[float]
        One cutoff in Hz for a low-pass, two strictly increasing cutoffs for a band-pass.
    order : int
        Prototype order. A band-pass of order ``n`` has ``n`` sections.
    sample_rate : int
        Design sample rate in Hz.

    Returns
    -------
    BiquadCascade
        Stable second-order sections.

    Raises
    ------
    RejectedInputError
        Cutoffs are missing, unordered, or outside ``(0, sample_rate / 2)``.
    """
    cutoffs = tuple(float(c) for c in cutoffs)
    expected = 2 if kind == 'bandpass' else 1
    if kind not in {'lowpass', 'bandpass'}:
        raise RejectedInputError(f'unsupported filter kind {kind!r}')
    if len(cutoffs) != expected:
        raise RejectedInputError(f'{kind} needs {expected} cutoff(s), got {len(cutoffs)}')
    if sample_rate <= 0 or order < 1:
        raise RejectedInputError(f'invalid design: order={order}, sample_rate={sample_rate}')
    nyquist = sample_rate / 2
    if any(not 0 < c < nyquist for c in cutoffs):
        raise RejectedInputError(f'cutoffs {cutoffs} must lie strictly between 0 and {nyquist} Hz')
    if kind == 'bandpass' and not cutoffs[0] < cutoffs[1]:
        raise RejectedInputError(f'band-pass cutoffs must be strictly increasing, got {cutoffs}')
    return _butter_sos(kind, cutoffs, order, sample_rate)


def filt_zero_phase(series: TimeSeries, filter: BiquadCascade) -> TimeSeries:  # noqa: A002
    """Apply ``filter`` forward and backward with odd reflection padding of ``3 * (order + 1)`` samples."""
    if series.sample_rate != filter.sample_rate:
        raise RejectedInputError(
            f'series sampled at {series.sample_rate} Hz, filter designed for {filter.sample_rate} Hz'
        )
    if len(series) <= filter.padlen:
        raise RejectedInputError(f'series of {len(series)} samples is too short for padding of {filter.padlen}')
    return series.replace(sps.sosfiltfilt(filter.sos, series.samples, padtype='odd', padlen=filter.padlen))


def derivative(series: TimeSeries) -> TimeSeries:
    """Central differences in units per second, one-sided at the endpoints."""
    if len(series) < 2:
        raise RejectedInputError('derivative needs at least two samples')
    return series.replace(np.gradient(series.samples, 1.0 / series.sample_rate))


def resultant(x: TimeSeries, y: TimeSeries, z: TimeSeries) -> TimeSeries:
    """Per-sample Euclidean norm of three channels."""
    if not len(x) == len(y) == len(z):
        raise RejectedInputError(f'channel lengths differ: {len(x)}, {len(y)}, {len(z)}')
    if not x.sample_rate == y.sample_rate == z.sample_rate:
        raise RejectedInputError('channel sample rates differ')
    a, b, c = x.samples, y.samples, z.samples
    return x.replace(np.sqrt(a * a + b * b + c * c))


def standardize(series: TimeSeries) -> TimeSeries:
    """Zero mean, unit population variance; constant series map to zeros."""
    if len(series) < 2:
        raise RejectedInputError('standardize needs at least two samples')
    samples = series.samples
    std = float(samples.std())
    if std < STD_EPSILON:
        return series.replace(np.zeros_like(samples))
    return series.replace((samples - samples.mean()) / std)


def roll_pitch(
    x: TimeSeries,
    y: TimeSeries,
    z: TimeSeries,
    smoothing: BiquadCascade,
) -> tuple[TimeSeries, TimeSeries]:
    """Attitude angles in radians with ``z`` along the tibia.

    roll = atan2(y, z), pitch = atan2(-x, sqrt(y^2 + z^2)), computed on the smoothed axes.
    """
    if not len(x) == len(y) == len(z):
        raise RejectedInputError(f'channel lengths differ: {len(x)}, {len(y)}, {len(z)}')
    sx = filt_zero_phase(x, smoothing).samples
    sy = filt_zero_phase(y, smoothing).samples
    sz = filt_zero_phase(z, smoothing).samples
    roll = np.arctan2(sy, sz)
    pitch = np.arctan2(-sx, np.sqrt(sy * sy + sz * sz))
    return x.replace(roll), x.replace(pitch)


def _run_starts(samples: FloatArray) -> npt.NDArray[np.intp]:
    keep = np.ones(samples.size, dtype=bool)
    keep[1:] = samples[1:] != samples[:-1]
    return np.flatnonzero(keep)


def local_maxima(samples: npt.ArrayLike) -> npt.NDArray[np.intp]:
    """Indices of interior local maxima; a plateau maximum reports its first sample.

    Edge samples never qualify because they lack a neighbor on one side.
    """
    values = np.asarray(samples, dtype=np.float64)
    if values.size < 3:
        return np.empty(0, dtype=np.intp)
    starts = _run_starts(values)
    run_values = values[starts]
    inner = np.flatnonzero((run_values[1:-1] > run_values[:-2]) & (run_values[1:-1] > run_values[2:])) + 1
    return starts[inner]


def local_minima(samples: npt.ArrayLike) -> npt.NDArray[np.intp]:
    """Indices of interior local minima; a plateau minimum reports its first sample."""
    return local_maxima(-np.asarray(samples, dtype=np.float64))


def peak_min_label(series: TimeSeries, window: int = 25) -> TimeSeries:
    """Centered moving average of the local-minimum indicator of ``series``.

    The output lies in ``[0, 1]`` and marks the neighborhood of each clear minimum.
    """
    if window < 3 or window % 2 == 0:
        raise RejectedInputError(f'window must be odd and at least 3, got {window}')
    if window > len(series):
        raise RejectedInputError(f'window {window} exceeds series length {len(series)}')
    indicator = np.zeros(len(series))
    indicator[local_minima(series.samples)] = 1.0
    kernel = np.full(window, 1.0 / window)
    return series.replace(np.convolve(indicator, kernel, mode='same'))
