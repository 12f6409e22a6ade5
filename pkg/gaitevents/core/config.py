from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal, Self

import anyio
import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from gaitevents.errors import RejectedConfigError, RejectedInputError
from gaitevents.utils import read_flat_yaml

if TYPE_CHECKING:
    from collections.abc import Sequence

__all__ = (
    'RunConfig',
    'SubjectSplit',
    'settings',
)


class EnvConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_file='.env',
        env_ignore_empty=True,
        extra='ignore',
    )


class Settings(EnvConfig):
    model_config = SettingsConfigDict(env_prefix='GAITEVENTS_')

    LOG_LEVEL: str = 'INFO'
    WORKERS: int = Field(default=4, ge=1)
    SAMPLE_RATE: int = Field(default=1000, gt=0)


class SubjectSplit(BaseModel):
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


class RunConfig(EnvConfig):
    """Everything a reproducible ``train``/``evaluate`` run needs, read from a flat key-value file."""

    model_config = SettingsConfigDict(env_prefix='GAITEVENTS_RUN_', extra='forbid')

    manifest: Path
    output_dir: Path = Path('runs')
    seed: int = 0

    # subject-level split; explicit lists win over the seeded split
    train_subjects: list[str] = Field(default_factory=list)
    validation_subjects: list[str] = Field(default_factory=list)
    test_subjects: list[str] = Field(default_factory=list)
    split_seed: int = 0
    n_validation: int = Field(default=3, ge=1)
    n_test: int = Field(default=3, ge=0)
    training_selection: Literal['second_step', 'all'] = 'second_step'

    # preprocessing
    grf_cutoff_hz: float = Field(default=60.0, gt=0)
    grf_threshold_n: float = Field(default=20.0, gt=0)
    bandpass_low_hz: float = Field(default=0.8, gt=0)
    bandpass_high_hz: float = Field(default=45.0, gt=0)
    orientation_cutoff_hz: float = Field(default=60.0, gt=0)
    peak_window: int = Field(default=25, ge=3)

    # structured perceptron
    perceptron_epochs: int = Field(default=15, ge=1)
    perceptron_learning_rate: float = Field(default=0.1, gt=0)

    # structured recurrent network
    rnn_hidden: int = Field(default=50, ge=1)
    rnn_layers: int = Field(default=2, ge=1)
    rnn_dropout: float = Field(default=0.2, ge=0, lt=1)
    rnn_learning_rate: float = Field(default=0.1, gt=0)
    rnn_epochs: int = Field(default=100, ge=1)
    rnn_patience: int = Field(default=10, ge=0)
    rnn_channels: Literal[2, 4] = 2

    @model_validator(mode='after')
    def _check_consistency(self) -> Self:
        if self.bandpass_low_hz >= self.bandpass_high_hz:
            raise ValueError('bandpass_low_hz must be below bandpass_high_hz')
        if self.peak_window % 2 == 0:
            raise ValueError('peak_window must be odd')
        groups = {
            'train_subjects': set(self.train_subjects),
            'validation_subjects': set(self.validation_subjects),
            'test_subjects': set(self.test_subjects),
        }
        names = list(groups)
        for i, first in enumerate(names):
            for second in names[i + 1 :]:
                overlap = groups[first] & groups[second]
                if overlap:
                    raise ValueError(f'{first} and {second} share subjects: {", ".join(sorted(overlap))}')
        return self

    @classmethod
    async def from_file(cls, file: Path | str, **overrides: Any) -> Self:
        """Load and validate a run configuration.

        Relative paths inside the file are resolved against the file's directory.

        Raises
        ------
        RejectedConfigError
            The file is unreadable, malformed, or names a manifest that does not exist.
        """
        file = Path(file)
        try:
            data = await read_flat_yaml(file)
        except (OSError, RejectedInputError) as e:
            raise RejectedConfigError(f'cannot read config {file}: {e}') from e

        data.update(overrides)
        for key in ('manifest', 'output_dir'):
            if key in data and not Path(data[key]).is_absolute():
                data[key] = file.parent / data[key]

        try:
            config = cls(**data)
        except ValidationError as e:
            raise RejectedConfigError(f'invalid config {file}:\n{e}') from e

        if not await anyio.Path(config.manifest).is_file():
            raise RejectedConfigError(f'manifest not found: {config.manifest}')
        return config

    def resolve_split(self, subjects: Sequence[str]) -> SubjectSplit:
        """Partition the available subjects into train, validation and test sets.

        Subjects named explicitly keep their role; the remaining subjects are shuffled with ``split_seed``
        and fill the test set, then the validation set, and the rest train.
        """
        available = sorted(set(subjects))
        named = set(self.train_subjects) | set(self.validation_subjects) | set(self.test_subjects)
        missing = named - set(available)
        if missing:
            raise RejectedConfigError(f'subjects not in manifest: {", ".join(sorted(missing))}')

        pool = [s for s in available if s not in named]
        pool = [pool[i] for i in np.random.default_rng(self.split_seed).permutation(len(pool))]

        test = list(self.test_subjects)
        while len(test) < self.n_test and pool and not self.test_subjects:
            test.append(pool.pop())
        validation = list(self.validation_subjects)
        while len(validation) < self.n_validation and pool and not self.validation_subjects:
            validation.append(pool.pop())
        train = list(self.train_subjects) if self.train_subjects else sorted(pool)

        if not train:
            raise RejectedConfigError('no training subjects left after the split')
        return SubjectSplit(train=tuple(sorted(train)), validation=tuple(sorted(validation)), test=tuple(sorted(test)))


settings = Settings()
