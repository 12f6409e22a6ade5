from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import signal as sps

from gaitevents.core.config import RunConfig
from gaitevents.core.dataset import Step
from gaitevents.core.features import FeatureConfig, FeatureMatrix, build_features
from gaitevents.errors import RejectedInputError

if TYPE_CHECKING:
    import numpy.typing as npt


def test_feature_dimensions() -> None:
    assert FeatureConfig.perceptron().dimension == 21
    assert FeatureConfig.network().dimension == 20
    names = FeatureConfig.perceptron().feature_names
    assert names[:4] == ('acc_left_x', 'acc_left_y', 'acc_left_z', 'acc_left_total')
    assert names[8] == 'jerk_left_x'
    assert names[16:20] == ('roll_left', 'roll_right', 'pitch_left', 'pitch_right')
    assert names[-1] == 'acc_right_x_peak_min'
    assert 'acc_right_x_peak_min' not in FeatureConfig.network().feature_names


def test_feature_config_validation() -> None:
    with pytest.raises(ValidationError):
        FeatureConfig(
            include_filtered_acc=False, include_jerk=False, include_orientation=False, include_peak_min=False
        )
    with pytest.raises(ValidationError):
        FeatureConfig(peak_window=24)


def test_from_run_config(tmp_path: Path) -> None:
    config = RunConfig(manifest=tmp_path / 'manifest.txt', bandpass_high_hz=40.0, peak_window=31)
    network = FeatureConfig.from_run_config(config, network=True)
    assert network.bandpass_high_hz == 40.0
    assert network.peak_window == 31
    assert not network.include_peak_min
    assert FeatureConfig.from_run_config(config, network=False).include_peak_min


def test_build_features(steps: list[Step]) -> None:
    step = steps[1]
    features = build_features(step, FeatureConfig.perceptron())
    assert features.values.shape == (len(step), 21)
    assert np.all(np.isfinite(features.values))
    np.testing.assert_allclose(features.values.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(features.values.std(axis=0), 1.0, atol=1e-9)


def test_build_features_is_deterministic(steps: list[Step]) -> None:
    config = FeatureConfig.network()
    first = build_features(steps[2], config)
    second = build_features(steps[2], config)
    np.testing.assert_array_equal(first.values, second.values)
    assert first.feature_names == config.feature_names


def test_single_family(steps: list[Step]) -> None:
    config = FeatureConfig(include_jerk=False, include_orientation=False, include_peak_min=False)
    features = build_features(steps[0], config)
    assert features.dimension == 8
    assert features.column('acc_right_total').shape == (len(steps[0]),)


def test_feature_matrix_rejects_mismatched_names() -> None:
    with pytest.raises(RejectedInputError):
        FeatureMatrix(values=np.zeros((5, 2)), feature_names=('a',))
    with pytest.raises(RejectedInputError):
        FeatureMatrix(values=np.array([[np.inf]]), feature_names=('a',))


@pytest.mark.anyio
async def test_dump_csv(tmp_path: Path) -> None:
    matrix = FeatureMatrix(values=np.array([[1.0, 2.0], [3.0, 4.5]]), feature_names=('a', 'b'))
    await matrix.dump_csv(tmp_path / 'features.csv')
    assert (tmp_path / 'features.csv').read_text(encoding='utf-8').splitlines() == ['a,b', '1,2', '3,4.5']


def _zscore(column: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    std = column.std()
    return np.zeros_like(column) if std < 1e-12 else (column - column.mean()) / std


def _reference_features(step: Step, window: int = 25) -> npt.NDArray[np.float64]:
    fs = step.sample_rate
    bandpass = sps.butter(2, [0.8, 45.0], btype='bandpass', fs=fs, output='sos')
    smoothing = sps.butter(2, 60.0, btype='lowpass', fs=fs, output='sos')
    sides = (step.acc_left, step.acc_right)

    acc: list[npt.NDArray[np.float64]] = []
    for raw in sides:
        axes = [sps.sosfiltfilt(bandpass, raw[:, k], padtype='odd', padlen=15) for k in range(3)]
        acc += [*axes, np.linalg.norm(np.column_stack(axes), axis=1)]
    jerk = [np.gradient(column, 1.0 / fs) for column in acc]

    smoothed = [[sps.sosfiltfilt(smoothing, raw[:, k], padtype='odd', padlen=9) for k in range(3)] for raw in sides]
    roll = [np.arctan2(y, z) for _, y, z in smoothed]
    pitch = [np.arctan2(-x, np.hypot(y, z)) for x, y, z in smoothed]

    right_x = acc[4]
    is_min = np.zeros(right_x.size)
    inner = (right_x[1:-1] < right_x[:-2]) & (right_x[1:-1] < right_x[2:])
    is_min[1:-1] = inner
    half = window // 2
    counts = np.concatenate([[0.0], np.cumsum(is_min)])
    lo = np.clip(np.arange(right_x.size) - half, 0, None)
    hi = np.clip(np.arange(right_x.size) + half + 1, None, right_x.size)
    peak_min = (counts[hi] - counts[lo]) / window

    return np.column_stack([_zscore(c) for c in [*acc, *jerk, *roll, *pitch, peak_min]])


def test_build_features_matches_reference(steps: list[Step]) -> None:
    for step in steps[:3]:
        features = build_features(step, FeatureConfig.perceptron())
        expected = _reference_features(step)
        np.testing.assert_allclose(features.values, expected, atol=1e-8)
        assert features.column('acc_right_x_peak_min').max() > 0


@pytest.mark.parametrize('scale', [9.81, 0.5])
def test_features_ignore_the_acceleration_unit(steps: list[Step], scale: float) -> None:
    step = steps[1]
    scaled = replace(step, acc_left=step.acc_left * scale, acc_right=step.acc_right * scale)
    config = FeatureConfig.perceptron()
    np.testing.assert_allclose(build_features(scaled, config).values, build_features(step, config).values, atol=1e-8)
