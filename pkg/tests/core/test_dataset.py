from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import anyio
import numpy as np
import pytest

from gaitevents.core.dataset import (
    Recording,
    Step,
    detect_grf_events,
    extract_steps,
    group_by_trial,
    load_manifest,
    load_recording,
    load_recordings,
    mirror,
    normalize_steps,
    reflect_channels,
    save_recording,
    select_training_steps,
    write_manifest,
)
from gaitevents.core.events import EventKind, Foot
from gaitevents.core.signal import TimeSeries
from gaitevents.core.synthgen import SyntheticTrial
from gaitevents.errors import RejectedInputError


def _contacts(n: int, *runs: tuple[int, int], force: float = 500.0) -> TimeSeries:
    samples = np.zeros(n)
    for start, stop in runs:
        samples[start:stop] = force
    return TimeSeries(samples)


def test_detect_grf_events() -> None:
    events = detect_grf_events(_contacts(1000, (100, 350), (600, 850)), foot=Foot.LEFT)
    assert [(e.kind, e.index) for e in events] == [
        (EventKind.IC, 100),
        (EventKind.TO, 349),
        (EventKind.IC, 600),
        (EventKind.TO, 849),
    ]
    assert all(e.foot is Foot.LEFT for e in events)


def test_detect_grf_events_drops_chatter_and_truncated_contacts() -> None:
    events = detect_grf_events(_contacts(1000, (0, 120), (300, 310), (500, 750), (900, 1000)))
    assert [e.index for e in events] == [500, 749]


def test_detect_grf_events_threshold_is_inclusive() -> None:
    events = detect_grf_events(_contacts(1000, (100, 300), force=20.0), 20.0)
    assert [e.index for e in events] == [100, 299]


def test_detect_grf_events_rejects_non_positive_threshold() -> None:
    with pytest.raises(RejectedInputError):
        detect_grf_events(_contacts(100), 0.0)


def test_recording_rejects_mismatched_channels() -> None:
    with pytest.raises(RejectedInputError):
        Recording(
            acc_left=np.zeros((10, 3)),
            acc_right=np.zeros((9, 3)),
            grf_left=np.zeros(10),
            grf_right=np.zeros(10),
            subject_id='S01',
            speed=3.2,
            trial_id='T01',
        )


def test_recording_clips_negative_force() -> None:
    recording = Recording(
        acc_left=np.zeros((3, 3)),
        acc_right=np.zeros((3, 3)),
        grf_left=np.array([-5.0, 0.0, 10.0]),
        grf_right=np.zeros(3),
        subject_id='S01',
        speed=3.2,
        trial_id='T01',
    )
    np.testing.assert_array_equal(recording.grf_left, [0.0, 0.0, 10.0])


def test_step_rejects_implausible_gold() -> None:
    acc = np.zeros((400, 3))
    with pytest.raises(RejectedInputError):
        Step(acc, acc, gold_ic=100, gold_to=90, subject_id='S01', speed=3.2, trial_id='T01')
    with pytest.raises(RejectedInputError):
        Step(acc, acc, gold_ic=100, gold_to=150, subject_id='S01', speed=3.2, trial_id='T01')


def test_extract_steps_matches_reference_events(trial: SyntheticTrial) -> None:
    steps = extract_steps(trial.recording)
    assert len(steps) == 8
    assert [s.window_start for s in steps] == sorted(s.window_start for s in steps)

    truth = {(e.foot, e.kind, e.index) for e in trial.events}
    for step in steps:
        gold = step.gold.shifted(step.window_start)
        assert (step.foot, EventKind.IC, gold.ic_index) in truth
        assert (step.foot, EventKind.TO, gold.to_index) in truth
        assert step.gold_ic == 200
        assert len(step) == step.gold_to + 200


def test_extract_steps_records_opposite_foot_events(trial: SyntheticTrial) -> None:
    steps = extract_steps(trial.recording)
    # the second right contact is preceded by a left toe off and followed by a left contact
    step = [s for s in steps if s.foot is Foot.RIGHT][1]
    assert step.gold_contra_to is not None
    assert step.gold_contra_to < step.gold_ic
    assert step.gold_contra_ic is not None
    assert step.gold_contra_ic > step.gold_to
    assert all(e.foot is Foot.LEFT for e in step.contra_events)


def test_reflect_channels_negates_medio_lateral_axis() -> None:
    acc = np.arange(6, dtype=np.float64).reshape(2, 3)
    np.testing.assert_array_equal(reflect_channels(acc), [[0, -1, 2], [3, -4, 5]])


def test_mirror(trial: SyntheticTrial) -> None:
    left = next(s for s in extract_steps(trial.recording) if s.foot is Foot.LEFT)
    mirrored = mirror(left)
    assert mirrored.foot is Foot.RIGHT
    assert mirrored.source_foot is Foot.LEFT
    assert mirrored.mirrored
    assert (mirrored.gold_ic, mirrored.gold_to) == (left.gold_ic, left.gold_to)
    np.testing.assert_array_equal(mirrored.acc_right, reflect_channels(left.acc_left))
    np.testing.assert_array_equal(mirrored.acc_left, reflect_channels(left.acc_right))
    np.testing.assert_array_equal(mirrored.axial.samples, left.axial.samples)
    assert all(e.foot is Foot.RIGHT for e in mirrored.contra_events)

    with pytest.raises(RejectedInputError):
        mirror(mirrored)


def test_normalize_steps(steps: list[Step]) -> None:
    assert all(step.foot is Foot.RIGHT for step in steps)
    assert sum(step.mirrored for step in steps) == 4


def test_select_training_steps(steps: list[Step]) -> None:
    trials = group_by_trial(steps)
    assert list(trials) == [('S07', 'T01')]
    selected = select_training_steps(trials)
    assert len(selected) == 1
    assert selected[0] is trials['S07', 'T01'][1]
    assert select_training_steps({('S01', 'T01'): trials['S07', 'T01'][:2]}) == []


@pytest.mark.anyio
async def test_recording_round_trip_is_exact(trial: SyntheticTrial, tmp_path: Path) -> None:
    file = tmp_path / 'S07_T01.csv'
    await save_recording(trial.recording, file)
    assert (tmp_path / 'S07_T01.meta.yaml').is_file()

    loaded = await load_recording(file)
    assert loaded.meta == trial.recording.meta
    np.testing.assert_array_equal(loaded.to_matrix(), trial.recording.to_matrix())


@pytest.mark.anyio
async def test_load_recording_rejects_wrong_header(trial: SyntheticTrial, tmp_path: Path) -> None:
    file = tmp_path / 'bad.csv'
    await save_recording(trial.recording, file)
    text = file.read_text(encoding='utf-8').replace('fzr', 'grf_r', 1)
    file.write_text(text, encoding='utf-8')
    with pytest.raises(RejectedInputError):
        await load_recording(file)


@pytest.mark.anyio
async def test_manifest_round_trip(trial: SyntheticTrial, tmp_path: Path) -> None:
    data = tmp_path / 'data'
    data.mkdir()
    files = [data / 'a.csv', data / 'b.csv']
    for file in files:
        await save_recording(trial.recording, file)

    manifest = tmp_path / 'manifest.txt'
    await write_manifest(files, manifest)
    assert manifest.read_text(encoding='utf-8').splitlines() == ['data/a.csv', 'data/b.csv']

    manifest.write_text('# comment\n\ndata/b.csv\ndata/a.csv\n', encoding='utf-8')
    paths = await load_manifest(manifest)
    assert [p.name for p in paths] == ['b.csv', 'a.csv']

    recordings = await load_recordings(paths, workers=2)
    assert len(recordings) == 2
    assert all(isinstance(r, Recording) for r in recordings)


@pytest.mark.anyio
async def test_load_manifest_missing_file(tmp_path: Path) -> None:
    with pytest.raises(OSError):  # noqa: PT011
        await load_manifest(anyio.Path(tmp_path / 'absent.txt'))


def test_steps_and_recordings_compare_by_identity(trial: SyntheticTrial, steps: list[Step]) -> None:
    first = steps[0]
    copy = replace(first)
    assert first == first  # noqa: PLR0124
    assert first != copy
    assert steps.index(steps[1]) == 1
    assert len({first, copy}) == 2

    recording = trial.recording
    assert recording in [replace(recording), recording]
    assert recording != replace(recording)
