from __future__ import annotations

import io
from dataclasses import dataclass
from typing import TYPE_CHECKING, Self

import numpy as np
from anyio import Path
from pydantic import BaseModel, Field, model_validator

from gaitevents.errors import RejectedInputError

from .events import Foot
from .signal import (
    TimeSeries,
    derivative,
    design_butterworth,
    filt_zero_phase,
    peak_min_label,
    resultant,
    roll_pitch,
    standardize,
)

if TYPE_CHECKING:
    import numpy.typing as npt

    from .config import RunConfig
    from .dataset import Step

__all__ = (
    'FeatureConfig',
    'FeatureMatrix',
    'build_features',
)

AXES = ('x', 'y', 'z')
SIDES = (Foot.LEFT, Foot.RIGHT)


class FeatureConfig(BaseModel):
    """Which feature families to build and how to filter them.

    Column order is fixed: filtered acceleration (left x, y, z, total, then right), jerk in the same
    order, roll left/right, pitch left/right, and the right anterior-posterior peak-minimum label.
    """

    include_filtered_acc: bool = True
    include_jerk: bool = True
    include_orientation: bool = True
    include_peak_min: bool = True
    bandpass_low_hz: float = Field(default=0.8, gt=0)
    bandpass_high_hz: float = Field(default=45.0, gt=0)
    filter_order: int = Field(default=2, ge=1)
    orientation_cutoff_hz: float = Field(default=60.0, gt=0)
    peak_window: int = Field(default=25, ge=3)

    @model_validator(mode='after')
    def _check(self) -> Self:
        if not (self.include_filtered_acc or self.include_jerk or self.include_orientation or self.include_peak_min):
            raise ValueError('at least one feature family must be enabled')
        if self.peak_window % 2 == 0:
            raise ValueError('peak_window must be odd')
        return self

    @classmethod
    def perceptron(cls, **kwargs: object) -> Self:
        """The 21-feature configuration."""
        return cls.model_validate(kwargs)

    @classmethod
    def network(cls, **kwargs: object) -> Self:
        """The 20-feature configuration: everything but the peak-minimum label."""
        return cls.model_validate({**kwargs, 'include_peak_min': False})

    @classmethod
    def from_run_config(cls, config: RunConfig, *, network: bool) -> Self:
        options: dict[str, object] = {
            'bandpass_low_hz': config.bandpass_low_hz,
            'bandpass_high_hz': config.bandpass_high_hz,
            'orientation_cutoff_hz': config.orientation_cutoff_hz,
            'peak_window': config.peak_window,
        }
        return cls.network(**options) if network else cls.perceptron(**options)

    @property
    def feature_names(self) -> tuple[str, ...]:
        names: list[str] = []
        if self.include_filtered_acc:
            names += [f'acc_{side}_{axis}' for side in SIDES for axis in (*AXES, 'total')]
        if self.include_jerk:
            names += [f'jerk_{side}_{axis}' for side in SIDES for axis in (*AXES, 'total')]
        if self.include_orientation:
            names += [f'{angle}_{side}' for angle in ('roll', 'pitch') for side in SIDES]
        if self.include_peak_min:
            names.append('acc_right_x_peak_min')
        return tuple(names)

    @property
    def dimension(self) -> int:
        return len(self.feature_names)


@dataclass(frozen=True, slots=True, eq=False)
class FeatureMatrix:
    values: npt.NDArray[np.float64]
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.feature_names):
            raise RejectedInputError(
                f'feature matrix of shape {values.shape} does not match {len(self.feature_names)} names'
            )
        if not np.all(np.isfinite(values)):
            raise RejectedInputError('feature matrix contains non-finite values')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.values.shape[1])

    def column(self, name: str) -> npt.NDArray[np.float64]:
        return self.values[:, self.feature_names.index(name)]

    async def dump_csv(self, file: Path | str) -> None:
        """Write the matrix with a ``feature_names`` header, for inspection."""
        buffer = io.StringIO()
        np.savetxt(buffer, self.values, fmt='%.17g', delimiter=',', header=','.join(self.feature_names), comments='')
        await Path(file).write_text(buffer.getvalue(), encoding='utf-8')


def build_features(step: Step, config: FeatureConfig) -> FeatureMatrix:
    """Per-sample feature vectors of one step, every column standardized within the step.

    Raises
    ------
    RejectedInputError
        The window is too short for the configured filters.
    """
    fs = step.sample_rate
    bandpass = design_butterworth(
        'bandpass', [config.bandpass_low_hz, config.bandpass_high_hz], config.filter_order, fs
    )
    smoothing = design_butterworth('lowpass', [config.orientation_cutoff_hz], 2, fs)

    filtered: dict[Foot, list[TimeSeries]] = {}
    for side in SIDES:
        axes = [filt_zero_phase(step.channel(side, axis), bandpass) for axis in range(3)]
        filtered[side] = [*axes, resultant(*axes)]

    columns: list[TimeSeries] = []
    if config.include_filtered_acc:
        columns += [channel for side in SIDES for channel in filtered[side]]
    if config.include_jerk:
        columns += [derivative(channel) for side in SIDES for channel in filtered[side]]
    if config.include_orientation:
        angles = {side: roll_pitch(*(step.channel(side, axis) for axis in range(3)), smoothing) for side in SIDES}
        columns += [angles[side][0] for side in SIDES]
        columns += [angles[side][1] for side in SIDES]
    if config.include_peak_min:
        columns.append(peak_min_label(filtered[Foot.RIGHT][0], config.peak_window))

    values = np.column_stack([standardize(column).samples for column in columns])
    return FeatureMatrix(values=values, feature_names=config.feature_names)
