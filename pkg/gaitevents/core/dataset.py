from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any

import anyio
import numpy as np
from anyio import Path
from pydantic import BaseModel, Field

from gaitevents.errors import RejectedInputError
from gaitevents.utils import read_flat_yaml, save_yaml

from .events import EventKind, EventPair, Foot, GaitEvent
from .signal import TimeSeries, design_butterworth, filt_zero_phase

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    import numpy.typing as npt

__all__ = (
    'CSV_HEADER',
    'Recording',
    'RecordingMeta',
    'Step',
    'detect_grf_events',
    'extract_steps',
    'filter_grf',
    'group_by_trial',
    'load_manifest',
    'load_recording',
    'load_recordings',
    'mirror',
    'normalize_steps',
    'reference_events',
    'reflect_channels',
    'save_recording',
    'select_training_steps',
    'write_manifest',
)

log = logging.getLogger('gaitevents.dataset')

type FloatArray = npt.NDArray[np.float64]

CSV_HEADER = ('t', 'alx', 'aly', 'alz', 'arx', 'ary', 'arz', 'fzl', 'fzr')
META_SUFFIX = '.meta.yaml'

GRF_THRESHOLD_N = 20.0
GRF_CUTOFF_HZ = 60.0
MIN_CONTACT_S = 0.05
WINDOW_PRE_S = 0.2
WINDOW_POST_S = 0.2
STANCE_RANGE_S = (0.1, 0.5)

# medio-lateral axis, the one a sagittal-plane reflection flips
ML_AXIS = 1


def _as_matrix(values: npt.ArrayLike, columns: int, name: str) -> FloatArray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != columns:
        raise RejectedInputError(f'{name} must have shape (n, {columns}), got {array.shape}')
    if not np.all(np.isfinite(array)):
        raise RejectedInputError(f'{name} contains non-finite values')
    array.setflags(write=False)
    return array


class RecordingMeta(BaseModel):
    subject_id: str
    speed: float = Field(gt=0)
    trial_id: str
    sample_rate: int = Field(gt=0)


@dataclass(frozen=True, slots=True, eq=False)
class Recording:
    """Synchronized bilateral tri-axial tibial acceleration (g) and vertical GRF (N).

    Acceleration columns are x anterior-posterior, y medio-lateral, z axial.
    """

    acc_left: FloatArray
    acc_right: FloatArray
    grf_left: FloatArray
    grf_right: FloatArray
    subject_id: str
    speed: float
    trial_id: str
    sample_rate: int = 1000

    def __post_init__(self) -> None:
        acc_left = _as_matrix(self.acc_left, 3, 'acc_left')
        acc_right = _as_matrix(self.acc_right, 3, 'acc_right')
        grf = _as_matrix(np.column_stack([self.grf_left, self.grf_right]), 2, 'grf')
        n = acc_left.shape[0]
        if n < 1 or acc_right.shape[0] != n or grf.shape[0] != n:
            raise RejectedInputError('all recording channels must share one non-zero length')
        if self.sample_rate <= 0:
            raise RejectedInputError(f'sample rate must be positive, got {self.sample_rate}')
        grf_left = np.clip(grf[:, 0], 0.0, None)
        grf_right = np.clip(grf[:, 1], 0.0, None)
        grf_left.setflags(write=False)
        grf_right.setflags(write=False)
        object.__setattr__(self, 'acc_left', acc_left)
        object.__setattr__(self, 'acc_right', acc_right)
        object.__setattr__(self, 'grf_left', grf_left)
        object.__setattr__(self, 'grf_right', grf_right)

    def __len__(self) -> int:
        return int(self.acc_left.shape[0])

    @property
    def meta(self) -> RecordingMeta:
        return RecordingMeta(
            subject_id=self.subject_id,
            speed=self.speed,
            trial_id=self.trial_id,
            sample_rate=self.sample_rate,
        )

    def acc(self, foot: Foot) -> FloatArray:
        return self.acc_left if foot is Foot.LEFT else self.acc_right

    def grf(self, foot: Foot) -> TimeSeries:
        return TimeSeries(self.grf_left if foot is Foot.LEFT else self.grf_right, self.sample_rate)

    def to_matrix(self) -> FloatArray:
        """Columns in ``CSV_HEADER`` order."""
        t = np.arange(len(self)) / self.sample_rate
        return np.column_stack([t, self.acc_left, self.acc_right, self.grf_left, self.grf_right])


@dataclass(frozen=True, slots=True, eq=False)
class Step:
    """One windowed contact of the ipsilateral foot.

    Indices are relative to the window. ``window_start`` locates the window in its recording.
    ``contra_events`` holds the opposite foot's events that fall inside the window.
    """

    acc_left: FloatArray
    acc_right: FloatArray
    gold_ic: int
    gold_to: int
    subject_id: str
    speed: float
    trial_id: str
    sample_rate: int = 1000
    foot: Foot = Foot.RIGHT
    mirrored: bool = False
    window_start: int = 0
    contra_events: tuple[GaitEvent, ...] = field(default=())

    def __post_init__(self) -> None:
        acc_left = _as_matrix(self.acc_left, 3, 'acc_left')
        acc_right = _as_matrix(self.acc_right, 3, 'acc_right')
        if acc_left.shape != acc_right.shape:
            raise RejectedInputError('left and right windows differ in length')
        length = acc_left.shape[0]
        if not 0 < self.gold_ic < self.gold_to < length:
            raise RejectedInputError(
                f'gold events ({self.gold_ic}, {self.gold_to}) must satisfy 0 < IC < TO < {length}'
            )
        stance = (self.gold_to - self.gold_ic) / self.sample_rate
        if not STANCE_RANGE_S[0] <= stance <= STANCE_RANGE_S[1]:
            raise RejectedInputError(f'gold stance {stance * 1000:.0f} ms is outside {STANCE_RANGE_S} s')
        object.__setattr__(self, 'acc_left', acc_left)
        object.__setattr__(self, 'acc_right', acc_right)

    def __len__(self) -> int:
        return int(self.acc_left.shape[0])

    @property
    def source_foot(self) -> Foot:
        """The foot that actually made contact in the recording."""
        return self.foot.opposite if self.mirrored else self.foot

    @property
    def gold(self) -> EventPair:
        return EventPair(
            ic_index=self.gold_ic,
            to_index=self.gold_to,
            sample_rate=self.sample_rate,
            contra_to=self.gold_contra_to,
            contra_ic=self.gold_contra_ic,
        )

    @property
    def gold_contra_to(self) -> int | None:
        """Last opposite-foot toe off before the gold contact."""
        candidates = [e.index for e in self.contra_events if e.kind is EventKind.TO and e.index < self.gold_ic]
        return max(candidates) if candidates else None

    @property
    def gold_contra_ic(self) -> int | None:
        """First opposite-foot contact after the gold toe off."""
        candidates = [e.index for e in self.contra_events if e.kind is EventKind.IC and e.index > self.gold_to]
        return min(candidates) if candidates else None

    def channel(self, foot: Foot, axis: int) -> TimeSeries:
        acc = self.acc_left if foot is Foot.LEFT else self.acc_right
        return TimeSeries(acc[:, axis], self.sample_rate)

    @property
    def axial(self) -> TimeSeries:
        """Unfiltered axial acceleration of the contacting leg."""
        return self.channel(self.foot, 2)


def filter_grf(vgrf: TimeSeries, cutoff: float = GRF_CUTOFF_HZ) -> TimeSeries:
    """Second-order zero-lag Butterworth low-pass of a force channel."""
    return filt_zero_phase(vgrf, design_butterworth('lowpass', [cutoff], 2, vgrf.sample_rate))


def detect_grf_events(
    vgrf: TimeSeries,
    threshold: float = GRF_THRESHOLD_N,
    *,
    foot: Foot = Foot.RIGHT,
    min_contact_s: float = MIN_CONTACT_S,
) -> list[GaitEvent]:
    """Initial contacts and toe offs from runs of ``vgrf >= threshold``.

    IC is the first sample of a run and TO its last. Runs shorter than ``min_contact_s`` are chatter,
    and runs touching either end of the series are truncated contacts; both are discarded.
    """
    if threshold <= 0:
        raise RejectedInputError(f'threshold must be positive, got {threshold}')
    above = (vgrf.samples >= threshold).astype(np.int8)
    edges = np.diff(np.concatenate([[0], above, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    min_samples = round(min_contact_s * vgrf.sample_rate)
    last = len(vgrf) - 1

    events: list[GaitEvent] = []
    for start, end in zip(starts.tolist(), ends.tolist(), strict=True):
        if end - start + 1 < min_samples:
            log.debug('discarding %d-sample contact at %d as chatter', end - start + 1, start)
            continue
        if start == 0 or end == last:
            log.debug('discarding truncated contact [%d, %d]', start, end)
            continue
        events.append(GaitEvent(EventKind.IC, foot, start, vgrf.sample_rate))
        events.append(GaitEvent(EventKind.TO, foot, end, vgrf.sample_rate))
    return events


def reference_events(
    recording: Recording,
    foot: Foot,
    *,
    cutoff: float = GRF_CUTOFF_HZ,
    threshold: float = GRF_THRESHOLD_N,
) -> list[GaitEvent]:
    """Criterion events of one foot: low-pass the force, then apply the threshold rule."""
    return detect_grf_events(filter_grf(recording.grf(foot), cutoff), threshold, foot=foot)


def extract_steps(
    recording: Recording,
    *,
    cutoff: float = GRF_CUTOFF_HZ,
    threshold: float = GRF_THRESHOLD_N,
    pre_s: float = WINDOW_PRE_S,
    post_s: float = WINDOW_POST_S,
) -> list[Step]:
    """Window every contact of both feet from ``pre_s`` before IC to ``post_s`` after TO.

    Steps are returned in recording time order. Windows that do not fit the recording are skipped;
    contacts with an implausible stance are dropped and logged.
    """
    fs = recording.sample_rate
    pre = round(pre_s * fs)
    post = round(post_s * fs)
    events = {foot: reference_events(recording, foot, cutoff=cutoff, threshold=threshold) for foot in Foot}

    steps: list[Step] = []
    for foot in Foot:
        own = events[foot]
        others = events[foot.opposite]
        for ic, to in zip(own[::2], own[1::2], strict=True):
            start = ic.index - pre
            stop = to.index + post
            if start < 0 or stop > len(recording):
                log.debug('%s/%s: %s window [%d, %d) outside recording', recording.subject_id, recording.trial_id, foot, start, stop)
                continue
            stance = (to.index - ic.index) / fs
            if not STANCE_RANGE_S[0] <= stance <= STANCE_RANGE_S[1]:
                log.warning(
                    '%s/%s: dropping %s contact at %d, stance %.0f ms outside [%.0f, %.0f] ms',
                    recording.subject_id,
                    recording.trial_id,
                    foot,
                    ic.index,
                    stance * 1000,
                    STANCE_RANGE_S[0] * 1000,
                    STANCE_RANGE_S[1] * 1000,
                )
                continue
            contra = tuple(
                replace(e, index=e.index - start) for e in others if start <= e.index < stop
            )
            steps.append(
                Step(
                    acc_left=recording.acc_left[start:stop],
                    acc_right=recording.acc_right[start:stop],
                    gold_ic=ic.index - start,
                    gold_to=to.index - start,
                    subject_id=recording.subject_id,
                    speed=recording.speed,
                    trial_id=recording.trial_id,
                    sample_rate=fs,
                    foot=foot,
                    window_start=start,
                    contra_events=contra,
                )
            )
    steps.sort(key=lambda s: s.window_start)
    return steps


def reflect_channels(acc: FloatArray) -> FloatArray:
    """Sagittal-plane reflection: negate the medio-lateral axis."""
    reflected = np.array(acc, dtype=np.float64)
    reflected[:, ML_AXIS] = -reflected[:, ML_AXIS]
    return reflected


def mirror(step: Step) -> Step:
    """Present a left-foot step as a right-foot step.

    Channel groups swap sides and both medio-lateral axes change sign; gold indices are untouched.
    """
    if step.foot is not Foot.LEFT:
        raise RejectedInputError('only left-foot steps can be mirrored')
    return replace(
        step,
        acc_left=reflect_channels(step.acc_right),
        acc_right=reflect_channels(step.acc_left),
        foot=Foot.RIGHT,
        mirrored=True,
        contra_events=tuple(replace(e, foot=e.foot.opposite) for e in step.contra_events),
    )


def normalize_steps(steps: Iterable[Step]) -> list[Step]:
    """Mirror every left-foot step so all steps start with a right contact."""
    return [mirror(step) if step.foot is Foot.LEFT else step for step in steps]


def group_by_trial(steps: Iterable[Step]) -> dict[tuple[str, str], list[Step]]:
    """Steps per ``(subject_id, trial_id)``, each list in recording time order."""
    trials: dict[tuple[str, str], list[Step]] = {}
    for step in steps:
        trials.setdefault((step.subject_id, step.trial_id), []).append(step)
    for trial in trials.values():
        trial.sort(key=lambda s: s.window_start)
    return trials


def select_training_steps(trials: Mapping[Any, Sequence[Step]]) -> list[Step]:
    """The second step of every trial holding at least three steps."""
    return [steps[1] for steps in trials.values() if len(steps) >= 3]


async def save_recording(recording: Recording, file: Path | str) -> None:
    """Write the CSV and its metadata sidecar; floats are written with round-trip precision."""
    file = Path(file)
    buffer = io.StringIO()
    np.savetxt(buffer, recording.to_matrix(), fmt='%.17g', delimiter=',', header=','.join(CSV_HEADER), comments='')
    await file.write_text(buffer.getvalue(), encoding='utf-8')
    await save_yaml(recording.meta.model_dump(), file.with_name(file.stem + META_SUFFIX))


def _parse_csv(text: str) -> FloatArray:
    header, _, body = text.partition('\n')
    if tuple(header.strip().split(',')) != CSV_HEADER:
        raise RejectedInputError(f'unexpected recording header {header.strip()!r}')
    data = np.loadtxt(io.StringIO(body), delimiter=',', ndmin=2, dtype=np.float64)
    if data.shape[1] != len(CSV_HEADER):
        raise RejectedInputError(f'expected {len(CSV_HEADER)} columns, got {data.shape[1]}')
    return data


async def load_recording(file: Path | str) -> Recording:
    file = Path(file)
    meta = RecordingMeta.model_validate(await read_flat_yaml(file.with_name(file.stem + META_SUFFIX)))
    text = await file.read_text(encoding='utf-8')
    data = await anyio.to_thread.run_sync(_parse_csv, text)
    return Recording(
        acc_left=data[:, 1:4],
        acc_right=data[:, 4:7],
        grf_left=data[:, 7],
        grf_right=data[:, 8],
        subject_id=meta.subject_id,
        speed=meta.speed,
        trial_id=meta.trial_id,
        sample_rate=meta.sample_rate,
    )


async def load_manifest(manifest: Path | str) -> list[Path]:
    """Recording paths listed in a manifest, relative entries resolved against its directory."""
    manifest = Path(manifest)
    text = await manifest.read_text(encoding='utf-8')
    paths = []
    for line in text.splitlines():
        entry = line.strip()
        if not entry or entry.startswith('#'):
            continue
        path = Path(entry)
        paths.append(path if path.is_absolute() else manifest.parent / path)
    return paths


async def load_recordings(paths: Sequence[Path | str], *, workers: int = 4) -> list[Recording]:
    """Load recordings concurrently; the result keeps the order of ``paths``."""
    results: list[Recording | None] = [None] * len(paths)
    limiter = anyio.CapacityLimiter(workers)

    async def load_one(index: int, path: Path | str) -> None:
        async with limiter:
            results[index] = await load_recording(path)

    async with anyio.create_task_group() as tg:
        for index, path in enumerate(paths):
            tg.start_soon(load_one, index, path)

    log.info('loaded %d recordings', len(paths))
    return [r for r in results if r is not None]


async def write_manifest(paths: Iterable[Path | str], manifest: Path | str) -> None:
    """Write a manifest listing ``paths`` relative to the manifest's directory when possible."""
    manifest = Path(manifest)
    base = await manifest.parent.absolute()
    lines = []
    for path in paths:
        absolute = await Path(path).absolute()
        try:
            lines.append(str(absolute.relative_to(base)))
        except ValueError:
            lines.append(str(absolute))
    await manifest.write_text('\n'.join(lines) + '\n', encoding='utf-8')
