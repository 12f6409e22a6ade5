from __future__ import annotations

from typing import Any

import pytest

from gaitevents.core.dataset import Step, extract_steps, normalize_steps
from gaitevents.core.synthgen import SubjectProfile, SyntheticTrial, generate_recording


@pytest.fixture(scope='session')
def anyio_backend() -> Any:
    return 'asyncio'


@pytest.fixture(scope='session')
def profile() -> SubjectProfile:
    return SubjectProfile.sample(7)


@pytest.fixture(scope='session')
def trial(profile: SubjectProfile) -> SyntheticTrial:
    return generate_recording(profile, 4, trial=1, subject_id='S07')


@pytest.fixture(scope='session')
def steps(trial: SyntheticTrial) -> list[Step]:
    return normalize_steps(extract_steps(trial.recording))


@pytest.fixture(scope='session')
def clean_steps(profile: SubjectProfile) -> list[Step]:
    noiseless = profile.model_copy(update={'noise_std_g': 0.0})
    return normalize_steps(extract_steps(generate_recording(noiseless, 4, trial=2, subject_id='S07').recording))
