from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Literal

import numpy as np
from anyio import Path
from pydantic import BaseModel

from gaitevents.core.events import DecodeFailure, EventPair
from gaitevents.core.features import FeatureConfig, build_features
from gaitevents.errors import ModelFormatError, RejectedInputError

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

    from gaitevents.core.dataset import Step
    from gaitevents.core.features import FeatureMatrix

__all__ = (
    'GAIT_MASK',
    'Label',
    'LabelSequence',
    'PerceptronDetector',
    'PerceptronModel',
    'StructuredPerceptron',
    'events_to_labels',
    'labels_to_events',
    'load_perceptron',
    'perceptron_predict',
    'perceptron_train',
    'save_perceptron',
    'viterbi',
)

log = logging.getLogger('gaitevents.structperc')

type FloatArray = npt.NDArray[np.float64]
type IntArray = npt.NDArray[np.intp]
type BoolArray = npt.NDArray[np.bool_]

FORMAT_VERSION = 1
VALID_STANCE_MS = (35.0, 500.0)


class Label(IntEnum):
    SWING = 0
    IC = 1
    STANCE = 2
    TO = 3


K = len(Label)

GAIT_MASK: BoolArray = np.zeros((K, K), dtype=bool)
for _prev, _next in (
    (Label.SWING, Label.SWING),
    (Label.SWING, Label.IC),
    (Label.IC, Label.STANCE),
    (Label.STANCE, Label.STANCE),
    (Label.STANCE, Label.TO),
    (Label.TO, Label.SWING),
):
    GAIT_MASK[_prev, _next] = True
GAIT_MASK.setflags(write=False)

# Decoding runs on a chain that splits Swing into before-contact and after-toe-off states so that a
# step holds exactly one contact. Both Swing states share the Swing weights.
CHAIN_LABELS: IntArray = np.array([Label.SWING, Label.IC, Label.STANCE, Label.TO, Label.SWING], dtype=np.intp)
CHAIN_MASK: BoolArray = np.zeros((5, 5), dtype=bool)
for _prev, _next in ((0, 0), (0, 1), (1, 2), (2, 2), (2, 3), (3, 4), (4, 4)):
    CHAIN_MASK[_prev, _next] = True
CHAIN_START: BoolArray = np.array([True, False, False, False, False])
CHAIN_END: BoolArray = np.array([False, False, False, False, True])


@dataclass(frozen=True, slots=True)
class LabelSequence:
    labels: IntArray

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.intp)
        if labels.ndim != 1 or labels.size < 1:
            raise RejectedInputError('a label sequence needs at least one label')
        if labels.min() < 0 or labels.max() >= K:
            raise RejectedInputError(f'labels must lie in [0, {K})')
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)

    def __len__(self) -> int:
        return int(self.labels.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelSequence):
            return NotImplemented
        return bool(np.array_equal(self.labels, other.labels))

    def __hash__(self) -> int:
        return hash(self.labels.tobytes())

    def obeys_grammar(self) -> bool:
        """Every transition allowed and exactly one IC followed later by exactly one TO."""
        labels = self.labels
        if not np.all(GAIT_MASK[labels[:-1], labels[1:]]):
            return False
        ic = np.flatnonzero(labels == Label.IC)
        to = np.flatnonzero(labels == Label.TO)
        return ic.size == 1 and to.size == 1 and ic[0] < to[0]


def viterbi(
    unary_scores: FloatArray,
    transition_scores: FloatArray,
    mask: BoolArray,
    *,
    start: BoolArray | None = None,
    end: BoolArray | None = None,
) -> IntArray | DecodeFailure:
    """Highest-scoring state path under unary and masked pairwise scores.

    Parameters
    ----------
    unary_scores : (l, K) array
        Score of each state at each position.
    transition_scores : (K, K) array
        Score of moving from state ``i`` to state ``j``.
    mask : (K, K) bool array
        Allowed transitions; forbidden ones score ``-inf``.
    start, end : (K,) bool arrays, optional
        States allowed at the first and last position. Unrestricted when omitted.

    Returns
    -------
    IntArray | DecodeFailure
        The argmax path. Among equal scores the path with the smallest state at the latest
        differing position wins. A failure is returned when no allowed path exists.
    """
    unary_scores = np.asarray(unary_scores, dtype=np.float64)
    length, k = unary_scores.shape
    if length < 1:
        raise RejectedInputError('viterbi needs at least one position')
    if transition_scores.shape != (k, k) or mask.shape != (k, k):
        raise RejectedInputError(f'transition scores and mask must be {k}x{k}')

    transitions = np.where(mask, transition_scores, -np.inf)
    delta = unary_scores[0] + (0.0 if start is None else np.where(start, 0.0, -np.inf))
    backpointers = np.zeros((length, k), dtype=np.intp)
    columns = np.arange(k)
    for t in range(1, length):
        candidates = delta[:, None] + transitions
        backpointers[t] = np.argmax(candidates, axis=0)
        delta = candidates[backpointers[t], columns] + unary_scores[t]

    if end is not None:
        delta = delta + np.where(end, 0.0, -np.inf)
    best = int(np.argmax(delta))
    if delta[best] == -np.inf:
        return DecodeFailure('no grammar-valid path')

    path = np.empty(length, dtype=np.intp)
    path[-1] = best
    for t in range(length - 1, 0, -1):
        path[t - 1] = backpointers[t, path[t]]
    return path


def events_to_labels(events: EventPair, length: int) -> LabelSequence:
    if not 0 <= events.ic_index < events.to_index < length:
        raise RejectedInputError(f'events ({events.ic_index}, {events.to_index}) outside [0, {length})')
    labels = np.full(length, Label.SWING, dtype=np.intp)
    labels[events.ic_index] = Label.IC
    labels[events.ic_index + 1 : events.to_index] = Label.STANCE
    labels[events.to_index] = Label.TO
    return LabelSequence(labels)


def labels_to_events(seq: LabelSequence, sample_rate: int = 1000) -> EventPair | DecodeFailure:
    if not seq.obeys_grammar():
        return DecodeFailure('label sequence lacks exactly one IC followed by one TO')
    ic = int(np.flatnonzero(seq.labels == Label.IC)[0])
    to = int(np.flatnonzero(seq.labels == Label.TO)[0])
    return EventPair(ic, to, sample_rate)


@dataclass(slots=True, eq=False)
class PerceptronModel:
    """Unary and transition weights of the averaged structured perceptron.

    Prediction uses the averaged weights; the raw weights are kept for inspection and resumption.
    """

    unary_weights: FloatArray
    unary_bias: FloatArray
    transition_weights: FloatArray
    averaged_unary_weights: FloatArray
    averaged_unary_bias: FloatArray
    averaged_transition_weights: FloatArray
    feature_config: FeatureConfig = field(default_factory=FeatureConfig.perceptron)
    learning_rate: float = 0.1
    transition_mask: BoolArray = field(default_factory=lambda: GAIT_MASK.copy())
    epochs: int = 0
    seed: int = 0
    mistakes_per_epoch: list[int] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return int(self.unary_weights.shape[1])

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.feature_config.feature_names


class StructuredPerceptron:
    """Online trainer keeping the running sum of weights for averaging.

    The average is taken over the weights held after every example visit.
    """

    def __init__(self, n_features: int, learning_rate: float = 0.1) -> None:
        self.learning_rate = learning_rate
        self.unary_weights = np.zeros((K, n_features))
        self.unary_bias = np.zeros(K)
        self.transition_weights = np.zeros((K, K))
        self._sum_unary = np.zeros((K, n_features))
        self._sum_bias = np.zeros(K)
        self._sum_transition = np.zeros((K, K))
        self.visits = 0

    @staticmethod
    def joint_features(X: FloatArray, labels: IntArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Per-label feature sums, label counts and transition counts of a labeled sequence."""
        unary = np.zeros((K, X.shape[1]))
        np.add.at(unary, labels, X)
        counts = np.bincount(labels, minlength=K).astype(np.float64)
        transitions = np.zeros((K, K))
        np.add.at(transitions, (labels[:-1], labels[1:]), 1.0)
        return unary, counts, transitions

    def decode(self, X: FloatArray, *, averaged: bool = False) -> IntArray | DecodeFailure:
        if averaged:
            W, b, T = self.averaged()
        else:
            W, b, T = self.unary_weights, self.unary_bias, self.transition_weights
        return decode_gait_labels(X @ W.T + b, T)

    def fit_one(self, X: FloatArray, gold: LabelSequence) -> bool:
        """Visit one example; returns whether it was a mistake."""
        predicted = self.decode(X)
        mistake = isinstance(predicted, DecodeFailure) or not np.array_equal(predicted, gold.labels)
        if mistake and not isinstance(predicted, DecodeFailure):
            gold_phi = self.joint_features(X, gold.labels)
            pred_phi = self.joint_features(X, predicted)
            self.unary_weights += self.learning_rate * (gold_phi[0] - pred_phi[0])
            self.unary_bias += self.learning_rate * (gold_phi[1] - pred_phi[1])
            self.transition_weights += self.learning_rate * (gold_phi[2] - pred_phi[2])

        self._sum_unary += self.unary_weights
        self._sum_bias += self.unary_bias
        self._sum_transition += self.transition_weights
        self.visits += 1
        return mistake

    def averaged(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        if self.visits == 0:
            return self.unary_weights.copy(), self.unary_bias.copy(), self.transition_weights.copy()
        return (
            self._sum_unary / self.visits,
            self._sum_bias / self.visits,
            self._sum_transition / self.visits,
        )


def decode_gait_labels(unary_scores: FloatArray, transition_weights: FloatArray) -> IntArray | DecodeFailure:
    """Viterbi over the one-contact chain, mapped back to the four gait labels."""
    chain_unary = unary_scores[:, CHAIN_LABELS]
    chain_transitions = transition_weights[np.ix_(CHAIN_LABELS, CHAIN_LABELS)]
    path = viterbi(chain_unary, chain_transitions, CHAIN_MASK, start=CHAIN_START, end=CHAIN_END)
    if isinstance(path, DecodeFailure):
        return path
    return CHAIN_LABELS[path]


def perceptron_train(
    examples: Sequence[tuple[FeatureMatrix, LabelSequence]],
    epochs: int = 15,
    learning_rate: float = 0.1,
    *,
    seed: int = 0,
    feature_config: FeatureConfig | None = None,
) -> PerceptronModel:
    """Train an averaged structured perceptron, shuffling the example order each epoch with ``seed``."""
    if not examples:
        raise RejectedInputError('perceptron training needs at least one example')
    n_features = examples[0][0].dimension
    if any(features.dimension != n_features for features, _ in examples):
        raise RejectedInputError('all training examples must share one feature dimension')
    if any(len(features) != len(labels) for features, labels in examples):
        raise RejectedInputError('feature and label sequences differ in length')

    trainer = StructuredPerceptron(n_features, learning_rate)
    rng = np.random.default_rng(seed)
    mistakes_per_epoch: list[int] = []
    for epoch in range(1, epochs + 1):
        mistakes = 0
        for index in rng.permutation(len(examples)):
            features, labels = examples[index]
            mistakes += trainer.fit_one(features.values, labels)
        mistakes_per_epoch.append(mistakes)
        log.info('perceptron epoch %d/%d: %d mistakes over %d examples', epoch, epochs, mistakes, len(examples))

    W, b, T = trainer.averaged()
    return PerceptronModel(
        unary_weights=trainer.unary_weights.copy(),
        unary_bias=trainer.unary_bias.copy(),
        transition_weights=trainer.transition_weights.copy(),
        averaged_unary_weights=W,
        averaged_unary_bias=b,
        averaged_transition_weights=T,
        feature_config=feature_config or FeatureConfig.perceptron(),
        learning_rate=learning_rate,
        epochs=epochs,
        seed=seed,
        mistakes_per_epoch=mistakes_per_epoch,
    )


def perceptron_predict(model: PerceptronModel, features: FeatureMatrix, sample_rate: int = 1000) -> EventPair | DecodeFailure:
    """Decode one step; stances outside 35-500 ms count as failures."""
    if features.dimension != model.n_features:
        raise RejectedInputError(f'model expects {model.n_features} features, got {features.dimension}')
    unary = features.values @ model.averaged_unary_weights.T + model.averaged_unary_bias
    labels = decode_gait_labels(unary, model.averaged_transition_weights)
    if isinstance(labels, DecodeFailure):
        return labels
    events = labels_to_events(LabelSequence(labels), sample_rate)
    if isinstance(events, DecodeFailure):
        return events
    stance_ms = events.stance_time * 1000
    if not VALID_STANCE_MS[0] <= stance_ms <= VALID_STANCE_MS[1]:
        return DecodeFailure(f'stance of {stance_ms:.0f} ms is implausible')
    return events


class PerceptronModelFile(BaseModel):
    format_version: int = FORMAT_VERSION
    kind: Literal['perceptron'] = 'perceptron'
    feature_names: list[str]
    feature_config: FeatureConfig
    labels: list[str] = [label.name for label in Label]
    learning_rate: float
    epochs: int
    seed: int
    mistakes_per_epoch: list[int]
    unary_weights: list[list[float]]
    unary_bias: list[float]
    transition_weights: list[list[float]]
    averaged_unary_weights: list[list[float]]
    averaged_unary_bias: list[float]
    averaged_transition_weights: list[list[float]]
    transition_mask: list[list[bool]]


async def save_perceptron(model: PerceptronModel, file: Path | str) -> None:
    document = PerceptronModelFile(
        feature_names=list(model.feature_names),
        feature_config=model.feature_config,
        learning_rate=model.learning_rate,
        epochs=model.epochs,
        seed=model.seed,
        mistakes_per_epoch=model.mistakes_per_epoch,
        unary_weights=model.unary_weights.tolist(),
        unary_bias=model.unary_bias.tolist(),
        transition_weights=model.transition_weights.tolist(),
        averaged_unary_weights=model.averaged_unary_weights.tolist(),
        averaged_unary_bias=model.averaged_unary_bias.tolist(),
        averaged_transition_weights=model.averaged_transition_weights.tolist(),
        transition_mask=model.transition_mask.tolist(),
    )
    await Path(file).write_text(document.model_dump_json(indent=1), encoding='utf-8')


async def load_perceptron(file: Path | str) -> PerceptronModel:
    text = await Path(file).read_text(encoding='utf-8')
    try:
        document = PerceptronModelFile.model_validate_json(text)
    except ValueError as e:
        raise ModelFormatError(f'{file} is not a perceptron model: {e}') from e
    if document.format_version != FORMAT_VERSION:
        raise ModelFormatError(f'{file}: unsupported format version {document.format_version}')
    if tuple(document.feature_names) != document.feature_config.feature_names:
        raise ModelFormatError(f'{file}: feature names do not match the feature configuration')

    d = len(document.feature_names)
    arrays: dict[str, FloatArray] = {}
    for name in ('unary_weights', 'averaged_unary_weights'):
        array = np.array(getattr(document, name), dtype=np.float64)
        if array.shape != (K, d):
            raise ModelFormatError(f'{file}: {name} has shape {array.shape}, expected {(K, d)}')
        arrays[name] = array
    for name in ('transition_weights', 'averaged_transition_weights'):
        array = np.array(getattr(document, name), dtype=np.float64)
        if array.shape != (K, K):
            raise ModelFormatError(f'{file}: {name} has shape {array.shape}, expected {(K, K)}')
        arrays[name] = array

    return PerceptronModel(
        unary_weights=arrays['unary_weights'],
        unary_bias=np.array(document.unary_bias, dtype=np.float64),
        transition_weights=arrays['transition_weights'],
        averaged_unary_weights=arrays['averaged_unary_weights'],
        averaged_unary_bias=np.array(document.averaged_unary_bias, dtype=np.float64),
        averaged_transition_weights=arrays['averaged_transition_weights'],
        feature_config=document.feature_config,
        learning_rate=document.learning_rate,
        transition_mask=np.array(document.transition_mask, dtype=bool),
        epochs=document.epochs,
        seed=document.seed,
        mistakes_per_epoch=document.mistakes_per_epoch,
    )


class PerceptronDetector:
    name = 'perceptron'

    def __init__(self, model: PerceptronModel) -> None:
        self.model = model

    def predict(self, step: Step) -> EventPair | DecodeFailure:
        features = build_features(step, self.model.feature_config)
        return perceptron_predict(self.model, features, step.sample_rate)
