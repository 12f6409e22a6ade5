from __future__ import annotations

import logging
from functools import partial
from typing import TYPE_CHECKING, NamedTuple, Self

import anyio
import numpy as np
import pandas as pd
from anyio import Path
from pydantic import BaseModel, Field, model_validator

from gaitevents.errors import RejectedInputError, RejectedProfileError
from gaitevents.utils import save_yaml, write_csv

from .dataset import (
    GRF_CUTOFF_HZ,
    GRF_THRESHOLD_N,
    Recording,
    detect_grf_events,
    filter_grf,
    save_recording,
    write_manifest,
)
from .events import EventKind, Foot, GaitEvent
from .signal import TimeSeries

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

__all__ = (
    'STANCE_LIMITS_MS',
    'SubjectProfile',
    'SyntheticTrial',
    'generate_dataset',
    'generate_recording',
    'rebuild_manifest',
)

log = logging.getLogger('gaitevents.synthgen')

type FloatArray = npt.NDArray[np.float64]

STANCE_LIMITS_MS = (170.0, 340.0)
FLIGHT_LIMITS_MS = (40.0, 190.0)
OPPOSING_LIMITS_MS = (35.0, 200.0)
# draws stay this far inside the limits so filtering and rounding cannot push truth outside them
GUARD_MS = 5.0
LEAD_MS = 500.0
TRUTH_HEADER = ('subject', 'trial', 'speed', 'foot', 'event', 'index', 'time_s')


class SubjectProfile(BaseModel):
    """Per-subject gait and signal parameters; every per-stride value is drawn from these."""

    seed: int = 0
    stance_mean_ms: float = Field(default=240.0, gt=0)
    stance_std_ms: float = Field(default=20.0, ge=0)
    flight_mean_ms: float = Field(default=110.0, gt=0)
    flight_std_ms: float = Field(default=15.0, ge=0)
    peak_mean_g: float = Field(default=8.0, gt=0)
    peak_std_g: float = Field(default=2.0, ge=0)
    latency_mean_ms: float = Field(default=15.0, gt=0)
    latency_std_ms: float = Field(default=5.0, ge=0)
    oscillation_mean_hz: float = Field(default=12.0, gt=0)
    oscillation_std_hz: float = Field(default=2.0, ge=0)
    noise_std_g: float = Field(default=0.15, ge=0)
    body_weight_n: float = Field(default=700.0, gt=0)

    @model_validator(mode='after')
    def _check_force(self) -> Self:
        if 2.5 * self.body_weight_n <= 4 * GRF_THRESHOLD_N:
            raise ValueError(f'body weight {self.body_weight_n} N is too low for the {GRF_THRESHOLD_N} N contact rule')
        return self

    @classmethod
    def sample(cls, seed: int, *, noise_std_g: float = 0.15) -> Self:
        """A plausible random subject."""
        rng = np.random.default_rng(seed)
        return cls(
            seed=seed,
            stance_mean_ms=float(rng.uniform(220, 265)),
            stance_std_ms=float(rng.uniform(8, 20)),
            flight_mean_ms=float(rng.uniform(90, 130)),
            flight_std_ms=float(rng.uniform(8, 16)),
            peak_mean_g=float(rng.uniform(6, 10)),
            peak_std_g=float(rng.uniform(1, 2)),
            latency_mean_ms=float(rng.uniform(10, 20)),
            latency_std_ms=float(rng.uniform(2, 5)),
            oscillation_mean_hz=float(rng.uniform(10, 14)),
            oscillation_std_hz=1.0,
            noise_std_g=noise_std_g,
            body_weight_n=float(rng.uniform(550, 900)),
        )


class SyntheticTrial(NamedTuple):
    recording: Recording
    events: list[GaitEvent]


def _draw(rng: np.random.Generator, mean: float, std: float, lo: float, hi: float) -> float:
    return float(np.clip(rng.normal(mean, std), lo, hi))


def _bump(t: FloatArray, center: float, width: float) -> FloatArray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _contact_force(t: FloatArray, start: float, duration: float, body_weight: float) -> FloatArray:
    """Raised-cosine active peak of 2.5 body weights plus an early impact transient, zero outside contact."""
    inside = (t >= start) & (t <= start + duration)
    phase = np.where(inside, (t - start) / duration, 0.0)
    active = 2.5 * body_weight * 0.5 * (1 - np.cos(2 * np.pi * phase))
    impact = 0.6 * body_weight * _bump(t, start + 0.12 * duration, 0.03 * duration) * np.sin(np.pi * phase)
    return np.where(inside, active + impact, 0.0)


def _threshold_fraction(body_weight: float, threshold: float) -> float:
    """Fraction of a raised-cosine contact spent below ``threshold`` at each end."""
    return float(np.arccos(1 - 2 * threshold / (2.5 * body_weight)) / (2 * np.pi))


def _axial_contact(
    t: FloatArray,
    ic: float,
    to: float,
    *,
    peak_g: float,
    latency: float,
    oscillation_hz: float,
) -> FloatArray:
    """Tibial axial shape of one contact, times in milliseconds.

    A dip marks the contact, the impact peak follows after ``latency``, two well separated maxima sit
    100-300 ms after the peak, and a toe-off dip follows the second of them.
    """
    peak = ic + latency
    second = float(np.clip(to - peak - 25, 210, 290))
    first = second - 105
    toe_off = max(to, peak + second + 25)

    signal = -1.5 * _bump(t, ic, 4.0)
    signal += peak_g * _bump(t, peak, 4.0)
    after = np.clip(t - peak, 0.0, None)
    signal += np.where(t > peak, 0.15 * peak_g * np.exp(-after / 25.0) * np.sin(2 * np.pi * oscillation_hz * after / 1000), 0.0)
    signal += 2.0 * _bump(t, peak + first, 12.0)
    signal += 1.8 * _bump(t, peak + second, 12.0)
    signal -= 2.2 * _bump(t, toe_off, 8.0)
    return signal


def _shift(values: FloatArray, samples: int) -> FloatArray:
    """Delay by ``samples`` (advance when negative), holding the edge value."""
    if samples == 0:
        return values.copy()
    if samples > 0:
        return np.concatenate([np.full(samples, values[0]), values[:-samples]])
    return np.concatenate([values[-samples:], np.full(-samples, values[-1])])


def _check_truth(events: dict[Foot, list[GaitEvent]], n_strides: int, sample_rate: int) -> None:
    ms_per_sample = 1000 / sample_rate
    for foot, own in events.items():
        if len(own) != 2 * n_strides:
            raise RejectedProfileError(f'{foot} foot: expected {n_strides} contacts, found {len(own) // 2}')
        for ic, to in zip(own[::2], own[1::2], strict=True):
            stance = (to.index - ic.index) * ms_per_sample
            if not STANCE_LIMITS_MS[0] <= stance <= STANCE_LIMITS_MS[1]:
                raise RejectedProfileError(f'{foot} stance of {stance:.0f} ms outside {STANCE_LIMITS_MS} ms')

    merged = sorted((e for own in events.values() for e in own), key=lambda e: e.index)
    for previous, current in zip(merged, merged[1:], strict=False):
        if previous.foot is current.foot:
            continue
        gap = (current.index - previous.index) * ms_per_sample
        if not OPPOSING_LIMITS_MS[0] <= gap <= OPPOSING_LIMITS_MS[1]:
            raise RejectedProfileError(f'opposing-foot gap of {gap:.0f} ms outside {OPPOSING_LIMITS_MS} ms')


def generate_recording(
    profile: SubjectProfile,
    n_strides: int,
    speed: float = 3.2,
    *,
    trial: int = 1,
    subject_id: str | None = None,
    sample_rate: int = 1000,
) -> SyntheticTrial:
    """Bilateral acceleration and force of ``n_strides`` running strides with their reference events.

    The right foot lands first and the feet alternate with a flight phase in between. Events are found by
    the reference rule on the force, which is never noised, so they are exact for noisy acceleration too.

    Raises
    ------
    RejectedProfileError
        The drawn timings produce events outside the stance or opposing-foot limits.
    """
    if n_strides < 1:
        raise RejectedInputError(f'n_strides must be at least 1, got {n_strides}')
    rng = np.random.default_rng([profile.seed, trial])
    fraction = _threshold_fraction(profile.body_weight_n, GRF_THRESHOLD_N)
    stance_lo, stance_hi = STANCE_LIMITS_MS[0] + GUARD_MS, STANCE_LIMITS_MS[1] - GUARD_MS
    flight_lo, flight_hi = FLIGHT_LIMITS_MS[0] + GUARD_MS, FLIGHT_LIMITS_MS[1] - GUARD_MS

    # durations include the sub-threshold edges; flights separate one toe off from the next contact
    n_contacts = 2 * n_strides
    stances = [_draw(rng, profile.stance_mean_ms, profile.stance_std_ms, stance_lo, stance_hi) for _ in range(n_contacts)]
    flights = [_draw(rng, profile.flight_mean_ms, profile.flight_std_ms, flight_lo, flight_hi) for _ in range(n_contacts)]
    durations = [stance / (1 - 2 * fraction) for stance in stances]

    contacts: list[tuple[Foot, float, float]] = []
    cursor = LEAD_MS
    for k, duration in enumerate(durations):
        contacts.append((Foot.RIGHT if k % 2 == 0 else Foot.LEFT, cursor, duration))
        if k + 1 < n_contacts:
            cursor += duration * (1 - fraction) + flights[k] - fraction * durations[k + 1]
    cursor += durations[-1]

    n = round((cursor + LEAD_MS) * sample_rate / 1000)
    t = np.arange(n) * 1000 / sample_rate
    grf = {foot: np.zeros(n) for foot in Foot}
    for foot, start, duration in contacts:
        grf[foot] += _contact_force(t, start, duration, profile.body_weight_n)

    events = {
        foot: detect_grf_events(
            filter_grf(TimeSeries(grf[foot], sample_rate), GRF_CUTOFF_HZ), GRF_THRESHOLD_N, foot=foot
        )
        for foot in Foot
    }
    _check_truth(events, n_strides, sample_rate)

    stride_ms = (cursor - LEAD_MS) / n_strides
    acc: dict[Foot, FloatArray] = {}
    for foot in Foot:
        phase = 0.0 if foot is Foot.RIGHT else np.pi
        axial = 1.0 + 0.5 * np.sin(2 * np.pi * t / stride_ms + phase)
        ap_cue = np.zeros(n)
        own = events[foot]
        for ic, to in zip(own[::2], own[1::2], strict=True):
            ic_ms, to_ms = ic.index * 1000 / sample_rate, to.index * 1000 / sample_rate
            axial += _axial_contact(
                t,
                ic_ms,
                to_ms,
                peak_g=_draw(rng, profile.peak_mean_g * speed / 3.2, profile.peak_std_g, 4.0, 14.0),
                latency=_draw(rng, profile.latency_mean_ms, profile.latency_std_ms, 8.0, 25.0),
                oscillation_hz=_draw(rng, profile.oscillation_mean_hz, profile.oscillation_std_hz, 6.0, 20.0),
            )
            ap_cue -= 2.5 * _bump(t, to_ms, 5.0)
        ap = 0.5 * _shift(axial - 1.0, round(0.004 * sample_rate)) + ap_cue
        ml = 0.3 * _shift(axial - 1.0, -round(0.003 * sample_rate))
        channels = np.column_stack([ap, ml, axial])
        if profile.noise_std_g > 0:
            channels = channels + rng.normal(0.0, profile.noise_std_g, channels.shape)
        acc[foot] = channels

    recording = Recording(
        acc_left=acc[Foot.LEFT],
        acc_right=acc[Foot.RIGHT],
        grf_left=grf[Foot.LEFT],
        grf_right=grf[Foot.RIGHT],
        subject_id=subject_id or f'S{profile.seed:02d}',
        speed=speed,
        trial_id=f'T{trial:02d}',
        sample_rate=sample_rate,
    )
    merged = sorted((e for own in events.values() for e in own), key=lambda e: (e.index, e.kind is EventKind.IC))
    return SyntheticTrial(recording, merged)


async def generate_dataset(
    out: Path | str,
    *,
    subjects: int,
    strides: int,
    seed: int = 0,
    strides_per_trial: int = 3,
    speeds: Sequence[float] = (3.2,),
    noise_std_g: float = 0.15,
) -> Path:
    """Write recordings, a manifest, reference events and subject profiles under ``out``.

    Each subject's strides are split into trials of at most ``strides_per_trial`` strides, one file per
    trial; trial speeds cycle through ``speeds``. Returns the manifest path.
    """
    if subjects < 1 or strides < 1 or strides_per_trial < 1:
        raise RejectedInputError('subjects, strides and strides per trial must be at least 1')
    if not speeds:
        raise RejectedInputError('at least one speed is needed')
    out = Path(out)
    await out.mkdir(parents=True, exist_ok=True)

    files: list[Path] = []
    truth_rows: list[dict[str, object]] = []
    profiles: dict[str, object] = {}
    for number in range(1, subjects + 1):
        subject_id = f'S{number:02d}'
        profile = SubjectProfile.sample(seed * 1000 + number, noise_std_g=noise_std_g)
        profiles[subject_id] = profile.model_dump()
        remaining = strides
        trial = 0
        while remaining > 0:
            trial += 1
            count = min(strides_per_trial, remaining)
            remaining -= count
            speed = float(speeds[(trial - 1) % len(speeds)])
            generated = await anyio.to_thread.run_sync(
                partial(generate_recording, profile, count, speed, trial=trial, subject_id=subject_id)
            )
            file = out / f'{subject_id}_T{trial:02d}.csv'
            await save_recording(generated.recording, file)
            files.append(file)
            truth_rows.extend(
                {
                    'subject': subject_id,
                    'trial': generated.recording.trial_id,
                    'speed': speed,
                    'foot': str(event.foot),
                    'event': str(event.kind),
                    'index': event.index,
                    'time_s': event.time,
                }
                for event in generated.events
            )
        log.info('generated %s: %d strides in %d trial(s)', subject_id, strides, trial)

    manifest = out / 'manifest.txt'
    await write_manifest(files, manifest)
    await write_csv(pd.DataFrame(truth_rows, columns=list(TRUTH_HEADER)), out / 'truth.csv')
    await save_yaml(profiles, out / 'profiles.yaml')
    return manifest


async def rebuild_manifest(directory: Path | str, manifest: Path | str) -> list[Path]:
    """List every recording CSV in ``directory`` that has a metadata sidecar, in name order."""
    directory = Path(directory)
    files = []
    async for file in directory.glob('*.csv'):
        if await file.with_name(file.stem + '.meta.yaml').is_file():
            files.append(file)
    files.sort(key=lambda f: f.name)
    if not files:
        raise RejectedInputError(f'no recordings found in {directory}')
    await write_manifest(files, manifest)
    return files
