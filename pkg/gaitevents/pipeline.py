from __future__ import annotations

import logging
from functools import partial
from typing import TYPE_CHECKING, Any, Literal

import anyio
from anyio import Path

from gaitevents.core.config import settings
from gaitevents.core.dataset import (
    extract_steps,
    group_by_trial,
    load_manifest,
    load_recordings,
    normalize_steps,
    select_training_steps,
)
from gaitevents.core.evaluation import (
    evaluate_detectors,
    impute_failures,
    temporal_errors,
    write_evaluation,
)
from gaitevents.core.features import FeatureConfig, build_features
from gaitevents.errors import GaitEventsError, RejectedConfigError
from gaitevents.methods import METHODS, MODEL_FILES, load_detectors
from gaitevents.methods.heuristic import MMethodDetector
from gaitevents.methods.neural import RnnDetector, rnn_train, save_rnn
from gaitevents.methods.structperc import (
    PerceptronDetector,
    events_to_labels,
    perceptron_train,
    save_perceptron,
)
from gaitevents.utils import save_yaml

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from gaitevents.core.config import RunConfig, SubjectSplit
    from gaitevents.core.dataset import Step
    from gaitevents.core.evaluation import Detector, ErrorRecord, SummaryStats
    from gaitevents.methods.neural import BiLSTMModel
    from gaitevents.methods.structperc import PerceptronModel

__all__ = (
    'evaluate_leave_one_out',
    'evaluate_models',
    'fit_perceptron',
    'fit_rnn',
    'load_steps',
    'train_method',
)

log = logging.getLogger('gaitevents.pipeline')

type LearnedMethod = Literal['perceptron', 'rnn']


async def load_steps(
    manifest: Path | str,
    *,
    config: RunConfig | None = None,
    workers: int | None = None,
) -> list[Step]:
    """Load every recording of a manifest and cut it into right-foot-normalized steps.

    Raises
    ------
    GaitEventsError
        The manifest lists no recordings or no step survives extraction.
    """
    paths = await load_manifest(manifest)
    if not paths:
        raise GaitEventsError(f'manifest {manifest} lists no recordings')
    recordings = await load_recordings(paths, workers=workers or settings.WORKERS)

    extract = extract_steps
    if config is not None:
        extract = partial(extract_steps, cutoff=config.grf_cutoff_hz, threshold=config.grf_threshold_n)
    steps: list[Step] = []
    for recording in recordings:
        steps += extract(recording)
    if not steps:
        raise GaitEventsError(f'no usable steps in the recordings of {manifest}')
    log.info('extracted %d steps from %d recordings', len(steps), len(recordings))
    return normalize_steps(steps)


def _of_subjects(steps: Iterable[Step], subjects: Iterable[str]) -> list[Step]:
    wanted = set(subjects)
    return [step for step in steps if step.subject_id in wanted]


def _training_steps(steps: Sequence[Step], config: RunConfig) -> list[Step]:
    if config.training_selection == 'all':
        return list(steps)
    return select_training_steps(group_by_trial(steps))


def fit_perceptron(config: RunConfig, steps: Sequence[Step]) -> PerceptronModel:
    """Train the structured perceptron on the training-selected subset of ``steps``."""
    feature_config = FeatureConfig.from_run_config(config, network=False)
    selected = _training_steps(steps, config)
    if not selected:
        raise RejectedConfigError('training selection left no steps; trials need at least three steps')
    examples = [
        (build_features(step, feature_config), events_to_labels(step.gold, len(step)))
        for step in selected
    ]
    log.info('training perceptron on %d steps', len(examples))
    return perceptron_train(
        examples,
        config.perceptron_epochs,
        config.perceptron_learning_rate,
        seed=config.seed,
        feature_config=feature_config,
    )


def fit_rnn(config: RunConfig, training: Sequence[Step], validation: Sequence[Step]) -> BiLSTMModel:
    """Train the structured recurrent network; validation uses every step of the validation subjects."""
    feature_config = FeatureConfig.from_run_config(config, network=True)
    selected = _training_steps(training, config)
    if not selected:
        raise RejectedConfigError('training selection left no steps; trials need at least three steps')
    log.info('training rnn on %d steps, validating on %d', len(selected), len(validation))
    return rnn_train(
        [(build_features(step, feature_config), step.gold) for step in selected],
        [(build_features(step, feature_config), step.gold) for step in validation],
        epochs=config.rnn_epochs,
        patience=config.rnn_patience,
        hidden=config.rnn_hidden,
        layers=config.rnn_layers,
        dropout=config.rnn_dropout,
        learning_rate=config.rnn_learning_rate,
        channels=config.rnn_channels,
        seed=config.seed,
        feature_config=feature_config,
        sample_rate=selected[0].sample_rate,
    )


def _split_log(split: SubjectSplit) -> dict[str, list[str]]:
    return {'train': list(split.train), 'validation': list(split.validation), 'test': list(split.test)}


async def train_method(method: LearnedMethod, config: RunConfig, out: Path | str) -> dict[str, Any]:
    """Train one learned method, write its model to ``out`` and a YAML training log beside it.

    The log lands at ``<out stem>.training.yaml``; its content is returned.
    """
    out = Path(out)
    await out.parent.mkdir(parents=True, exist_ok=True)
    steps = await load_steps(config.manifest, config=config)
    split = config.resolve_split([step.subject_id for step in steps])
    training = _of_subjects(steps, split.train)
    log.info('split: %d train, %d validation, %d test subjects', len(split.train), len(split.validation), len(split.test))

    record: dict[str, Any] = {'method': method, 'seed': config.seed, 'split': _split_log(split)}
    if method == 'perceptron':
        perceptron = await anyio.to_thread.run_sync(fit_perceptron, config, training)
        await save_perceptron(perceptron, out)
        record |= {
            'epochs': perceptron.epochs,
            'mistakes_per_epoch': list(perceptron.mistakes_per_epoch),
        }
    else:
        validation = _of_subjects(steps, split.validation)
        if not validation:
            raise RejectedConfigError('rnn training needs at least one validation subject')
        rnn = await anyio.to_thread.run_sync(fit_rnn, config, training, validation)
        await save_rnn(rnn, out)
        record |= {
            'train_loss': [float(v) for v in rnn.history.train_loss],
            'validation_mae_ms': [float(v) for v in rnn.history.validation_mae_ms],
            'best_epoch': rnn.history.best_epoch,
            'stop_reason': rnn.history.stop_reason,
        }

    await save_yaml(record, out.with_name(out.stem + '.training.yaml'))
    log.info('wrote %s model to %s', method, out)
    return record


async def _write_run(
    detectors: Sequence[Detector],
    steps: Sequence[Step],
    out: Path,
    *,
    workers: int,
) -> list[SummaryStats]:
    records, predictions = await evaluate_detectors(detectors, steps, workers=workers)
    records = impute_failures(records)
    methods = [d.name for d in detectors]
    return await write_evaluation(records, out, methods=methods, temporal_rows=temporal_errors(steps, predictions))


async def evaluate_models(
    models: Path | str,
    manifest: Path | str,
    out: Path | str,
    *,
    subjects: Sequence[str] | None = None,
    config: RunConfig | None = None,
    workers: int | None = None,
) -> list[SummaryStats]:
    """Evaluate the M-method and every stored learned model on the steps of a manifest.

    Without explicit ``subjects`` a ``config`` restricts the run to the test subjects of its split.

    Raises
    ------
    GaitEventsError
        No learned model could be loaded or no step belongs to the requested subjects.
    """
    detectors = await load_detectors(Path(models))
    if len(detectors) == 1:
        raise GaitEventsError(f'no learned model found in {models} (expected {", ".join(MODEL_FILES.values())})')

    steps = await load_steps(manifest, config=config, workers=workers)
    if not subjects and config is not None:
        subjects = config.resolve_split([step.subject_id for step in steps]).test
    if subjects:
        steps = _of_subjects(steps, subjects)
        if not steps:
            raise GaitEventsError(f'no steps for subjects {", ".join(subjects)}')
    return await _write_run(detectors, steps, Path(out), workers=workers or settings.WORKERS)


async def evaluate_leave_one_out(config: RunConfig, out: Path | str, *, workers: int | None = None) -> list[SummaryStats]:
    """Hold out each subject in turn, retrain both learned methods on the others and pool the errors."""
    out = Path(out)
    workers = workers or settings.WORKERS
    steps = await load_steps(config.manifest, config=config, workers=workers)
    subjects = sorted({step.subject_id for step in steps})
    if len(subjects) < config.n_validation + 2:
        raise RejectedConfigError(
            f'leave-one-out needs at least {config.n_validation + 2} subjects, the manifest has {len(subjects)}'
        )

    fold_config = config.model_copy(
        update={'train_subjects': [], 'validation_subjects': [], 'test_subjects': [], 'n_test': 0}
    )
    pooled: list[ErrorRecord] = []
    pooled_temporal: list[dict[str, object]] = []
    for held_out in subjects:
        split = fold_config.resolve_split([s for s in subjects if s != held_out])
        training = _of_subjects(steps, split.train)
        validation = _of_subjects(steps, split.validation)
        log.info('fold %s: %d train, %d validation subjects', held_out, len(split.train), len(split.validation))

        perceptron = await anyio.to_thread.run_sync(fit_perceptron, fold_config, training)
        rnn = await anyio.to_thread.run_sync(fit_rnn, fold_config, training, validation)
        detectors: list[Detector] = [MMethodDetector(), PerceptronDetector(perceptron), RnnDetector(rnn)]
        test = _of_subjects(steps, [held_out])
        records, predictions = await evaluate_detectors(detectors, test, workers=workers)
        pooled += records
        pooled_temporal += temporal_errors(test, predictions)

    return await write_evaluation(impute_failures(pooled), out, methods=METHODS, temporal_rows=pooled_temporal)
