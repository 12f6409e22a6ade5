"""Bidirectional LSTM event scorer trained with the structural hinge loss.

Everything is plain numpy: forward recurrences, full backpropagation through time, and AdaGrad.
Gate blocks are stacked in the order input, forget, cell, output.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
from anyio import Path
from pydantic import BaseModel

from gaitevents.core.events import DecodeFailure, EventPair
from gaitevents.core.features import FeatureConfig, FeatureMatrix, build_features
from gaitevents.errors import ModelFormatError, RejectedConfigError, RejectedInputError

from .decoder import (
    CONTRA_IC_CHANNEL,
    CONTRA_TO_CHANNEL,
    IC_CHANNEL,
    TO_CHANNEL,
    TimingConstraints,
    best_pair,
    constrained_peak_decode,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

    from gaitevents.core.dataset import Step

__all__ = (
    'AdaGradState',
    'BiLSTMModel',
    'ForwardCache',
    'LSTMLayerParams',
    'RnnDetector',
    'TrainingHistory',
    'adagrad_step',
    'bilstm_backward',
    'bilstm_forward',
    'load_rnn',
    'rnn_predict',
    'rnn_train',
    'save_rnn',
    'structural_hinge_loss',
)

log = logging.getLogger('gaitevents.neural')

type FloatArray = npt.NDArray[np.float64]
type Params = dict[str, FloatArray]
type Example = tuple[FeatureMatrix, EventPair]

FORMAT_VERSION = 1
DIRECTIONS = ('fwd', 'bwd')


def _sigmoid(x: FloatArray) -> FloatArray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True, slots=True, eq=False)
class LSTMLayerParams:
    """View on one direction of one layer; the arrays are shared with the owning model."""

    input_weights: FloatArray
    hidden_weights: FloatArray
    bias: FloatArray

    @property
    def hidden(self) -> int:
        return int(self.hidden_weights.shape[1])


@dataclass(slots=True)
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    validation_mae_ms: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ''


@dataclass(slots=True, eq=False)
class BiLSTMModel:
    """Stacked bidirectional LSTM with a linear projection to ``channels`` event-score channels.

    ``version`` is bumped on every parameter update and lets a backward pass reject stale caches.
    """

    params: Params
    input_size: int
    hidden: int = 50
    layers: int = 2
    channels: Literal[2, 4] = 2
    dropout: float = 0.2
    feature_config: FeatureConfig = field(default_factory=FeatureConfig.network)
    constraints: TimingConstraints = field(default_factory=TimingConstraints)
    learning_rate: float = 0.1
    seed: int = 0
    history: TrainingHistory = field(default_factory=TrainingHistory)
    version: int = 0

    @classmethod
    def initialize(
        cls,
        input_size: int,
        hidden: int = 50,
        layers: int = 2,
        channels: Literal[2, 4] = 2,
        *,
        dropout: float = 0.2,
        seed: int = 0,
        feature_config: FeatureConfig | None = None,
        constraints: TimingConstraints | None = None,
        learning_rate: float = 0.1,
    ) -> BiLSTMModel:
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases except a forget bias of 1."""
        if input_size < 1 or hidden < 1 or layers < 1:
            raise RejectedInputError('input size, hidden units and layers must be positive')
        if not 0 <= dropout < 1:
            raise RejectedInputError(f'dropout must lie in [0, 1), got {dropout}')
        rng = np.random.default_rng(seed)
        params: Params = {}
        for layer in range(layers):
            fan_in = input_size if layer == 0 else 2 * hidden
            for direction in DIRECTIONS:
                prefix = f'l{layer}_{direction}'
                bound = 1 / np.sqrt(fan_in)
                params[f'{prefix}_W'] = rng.uniform(-bound, bound, (4 * hidden, fan_in))
                bound = 1 / np.sqrt(hidden)
                params[f'{prefix}_U'] = rng.uniform(-bound, bound, (4 * hidden, hidden))
                bias = np.zeros(4 * hidden)
                bias[hidden : 2 * hidden] = 1.0
                params[f'{prefix}_b'] = bias
        bound = 1 / np.sqrt(2 * hidden)
        params['out_W'] = rng.uniform(-bound, bound, (channels, 2 * hidden))
        params['out_b'] = np.zeros(channels)
        return cls(
            params=params,
            input_size=input_size,
            hidden=hidden,
            layers=layers,
            channels=channels,
            dropout=dropout,
            seed=seed,
            feature_config=feature_config or FeatureConfig.network(),
            constraints=constraints or TimingConstraints(),
            learning_rate=learning_rate,
        )

    def layer(self, layer: int, direction: str) -> LSTMLayerParams:
        prefix = f'l{layer}_{direction}'
        return LSTMLayerParams(self.params[f'{prefix}_W'], self.params[f'{prefix}_U'], self.params[f'{prefix}_b'])

    def snapshot(self) -> Params:
        return {name: value.copy() for name, value in self.params.items()}


@dataclass(slots=True, eq=False)
class _DirectionCache:
    inputs: FloatArray
    gates: FloatArray  # (l, 4H) activated i, f, g, o
    cells: FloatArray
    outputs: FloatArray
    reverse: bool


@dataclass(slots=True, eq=False)
class ForwardCache:
    directions: list[tuple[_DirectionCache, _DirectionCache]]
    masks: list[FloatArray | None]
    top: FloatArray
    model_version: int


def _run_direction(X: FloatArray, p: LSTMLayerParams, *, reverse: bool) -> _DirectionCache:
    length = X.shape[0]
    H = p.hidden
    Z = X @ p.input_weights.T + p.bias
    U = p.hidden_weights
    gates = np.empty((length, 4 * H))
    cells = np.empty((length, H))
    outputs = np.empty((length, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(length - 1, -1, -1) if reverse else range(length):
        z = Z[t] + U @ h
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        g = np.tanh(z[2 * H : 3 * H])
        o = _sigmoid(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = g
        gates[t, 3 * H :] = o
        cells[t] = c
        outputs[t] = h
    return _DirectionCache(X, gates, cells, outputs, reverse)


def _backprop_direction(
    cache: _DirectionCache, p: LSTMLayerParams, d_outputs: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Gradients of (input weights, hidden weights, bias, inputs) given gradients of the outputs."""
    length = d_outputs.shape[0]
    H = p.hidden
    U = p.hidden_weights
    dZ = np.empty((length, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    order = range(length) if cache.reverse else range(length - 1, -1, -1)
    step = 1 if cache.reverse else -1
    for t in order:
        prev = t + step
        has_prev = 0 <= prev < length
        h_prev = cache.outputs[prev] if has_prev else np.zeros(H)
        c_prev = cache.cells[prev] if has_prev else np.zeros(H)

        i = cache.gates[t, :H]
        f = cache.gates[t, H : 2 * H]
        g = cache.gates[t, 2 * H : 3 * H]
        o = cache.gates[t, 3 * H :]
        tanh_c = np.tanh(cache.cells[t])

        dh = d_outputs[t] + dh_next
        dc = dh * o * (1 - tanh_c**2) + dc_next
        dz = np.concatenate([
            dc * g * i * (1 - i),
            dc * c_prev * f * (1 - f),
            dc * i * (1 - g**2),
            dh * tanh_c * o * (1 - o),
        ])
        dZ[t] = dz
        dU += np.outer(dz, h_prev)
        dh_next = U.T @ dz
        dc_next = dc * f

    return dZ.T @ cache.inputs, dU, dZ.sum(axis=0), dZ @ p.input_weights


def bilstm_forward(
    model: BiLSTMModel,
    features: FeatureMatrix | FloatArray,
    *,
    training: bool = False,
    rng_seed: int | Sequence[int] | None = None,
) -> tuple[FloatArray, ForwardCache | None]:
    """Per-sample event scores, shape ``(l, channels)``.

    Dropout masks are drawn from ``rng_seed`` only when ``training``; the cache is returned only then.
    """
    X = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_size:
        raise RejectedInputError(f'model expects {model.input_size} features, got shape {X.shape}')

    rng = np.random.default_rng(rng_seed) if training and model.dropout > 0 else None
    directions: list[tuple[_DirectionCache, _DirectionCache]] = []
    masks: list[FloatArray | None] = []
    for layer in range(model.layers):
        fwd = _run_direction(X, model.layer(layer, 'fwd'), reverse=False)
        bwd = _run_direction(X, model.layer(layer, 'bwd'), reverse=True)
        X = np.concatenate([fwd.outputs, bwd.outputs], axis=1)
        mask = None
        if rng is not None:
            keep = 1.0 - model.dropout
            mask = (rng.random(X.shape) < keep) / keep
            X = X * mask
        directions.append((fwd, bwd))
        masks.append(mask)

    scores = X @ model.params['out_W'].T + model.params['out_b']
    if not training:
        return scores, None
    return scores, ForwardCache(directions, masks, X, model.version)


def bilstm_backward(model: BiLSTMModel, cache: ForwardCache | None, upstream: FloatArray) -> Params:
    """Parameter gradients by backpropagation through time across every layer and direction.

    Raises
    ------
    RejectedInputError
        The cache is missing or was produced before the model's latest update.
    """
    if cache is None:
        raise RejectedInputError('backward pass needs the cache of a training-mode forward pass')
    if cache.model_version != model.version:
        raise RejectedInputError('cache is stale: the model was updated after the forward pass')
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cache.top.shape[0], model.channels):
        raise RejectedInputError(f'upstream gradient has shape {upstream.shape}')

    grads: Params = {
        'out_W': upstream.T @ cache.top,
        'out_b': upstream.sum(axis=0),
    }
    dX = upstream @ model.params['out_W']
    H = model.hidden
    for layer in range(model.layers - 1, -1, -1):
        mask = cache.masks[layer]
        if mask is not None:
            dX = dX * mask
        d_inputs = np.zeros_like(cache.directions[layer][0].inputs)
        for direction, dcache, d_out in zip(DIRECTIONS, cache.directions[layer], (dX[:, :H], dX[:, H:]), strict=True):
            dW, dU, db, dIn = _backprop_direction(dcache, model.layer(layer, direction), d_out)
            prefix = f'l{layer}_{direction}'
            grads[f'{prefix}_W'] = dW
            grads[f'{prefix}_U'] = dU
            grads[f'{prefix}_b'] = db
            d_inputs += dIn
        dX = d_inputs
    return {name: grads[name] for name in model.params}


def _pair_score(scores: FloatArray, events: EventPair, *, four_channels: bool) -> float:
    total = scores[events.ic_index, IC_CHANNEL] + scores[events.to_index, TO_CHANNEL]
    if four_channels and events.contra_to is not None and events.contra_ic is not None:
        total += scores[events.contra_to, CONTRA_TO_CHANNEL] + scores[events.contra_ic, CONTRA_IC_CHANNEL]
    return float(total)


def _mark(grad: FloatArray, events: EventPair, sign: float, *, four_channels: bool) -> None:
    grad[events.ic_index, IC_CHANNEL] += sign
    grad[events.to_index, TO_CHANNEL] += sign
    if four_channels and events.contra_to is not None and events.contra_ic is not None:
        grad[events.contra_to, CONTRA_TO_CHANNEL] += sign
        grad[events.contra_ic, CONTRA_IC_CHANNEL] += sign


def structural_hinge_loss(
    scores: FloatArray,
    gold: EventPair,
    constraints: TimingConstraints | None = None,
    *,
    sample_rate: int = 1000,
) -> tuple[float, FloatArray]:
    """Hinge on the best loss-augmented rival and its subgradient with respect to ``scores``.

    The rival maximizes ``|ic - gold_ic| + |to - gold_to| + score`` over every timing-valid pair, so the
    gold pair is always in the search space when it is itself valid. With four channels the opposite
    foot's events join the score and the distance when the gold pair carries them.
    """
    scores = np.asarray(scores, dtype=np.float64)
    length = scores.shape[0]
    if not 0 <= gold.ic_index < gold.to_index < length:
        raise RejectedInputError(f'gold events ({gold.ic_index}, {gold.to_index}) outside [0, {length})')

    four = scores.shape[1] == 4 and gold.contra_to is not None and gold.contra_ic is not None
    view = scores if four else scores[:, :2]
    decoded = best_pair(view, constraints, gold, peaks_only=False, sample_rate=sample_rate)
    grad = np.zeros_like(scores)
    if isinstance(decoded, DecodeFailure):
        log.warning('no timing-valid pair in a %d-sample window, using the unconstrained argmax', length)
        positions = np.arange(length)
        a = scores[:, IC_CHANNEL] + np.abs(positions - gold.ic_index)
        b = scores[:, TO_CHANNEL] + np.abs(positions - gold.to_index)
        ic, to = int(np.argmax(a)), int(np.argmax(b))
        loss = max(0.0, float(a[ic] + b[to]) - _pair_score(scores, gold, four_channels=False))
        if loss > 0:
            grad[ic, IC_CHANNEL] += 1.0
            grad[to, TO_CHANNEL] += 1.0
            _mark(grad, gold, -1.0, four_channels=False)
        return loss, grad

    loss = max(0.0, decoded.objective - _pair_score(view, gold, four_channels=four))
    if loss > 0:
        _mark(grad, decoded.events, 1.0, four_channels=four)
        _mark(grad, gold, -1.0, four_channels=four)
    return loss, grad


@dataclass(slots=True, eq=False)
class AdaGradState:
    learning_rate: float = 0.1
    epsilon: float = 1e-8
    accumulators: Params = field(default_factory=dict)


def adagrad_step(state: AdaGradState, params: Params, gradients: Params) -> tuple[Params, AdaGradState]:
    """In-place AdaGrad update of every parameter that has a gradient."""
    for name, grad in gradients.items():
        if name not in params:
            raise RejectedInputError(f'gradient for unknown parameter {name!r}')
        param = params[name]
        if grad.shape != param.shape:
            raise RejectedInputError(f'{name}: gradient shape {grad.shape} does not match {param.shape}')
        acc = state.accumulators.setdefault(name, np.zeros_like(param))
        acc += grad * grad
        param -= state.learning_rate * grad / (np.sqrt(acc) + state.epsilon)
    return params, state


def rnn_predict(model: BiLSTMModel, features: FeatureMatrix, sample_rate: int = 1000) -> EventPair | DecodeFailure:
    scores, _ = bilstm_forward(model, features)
    return constrained_peak_decode(scores, model.constraints, sample_rate=sample_rate)


def validation_mae_ms(model: BiLSTMModel, examples: Sequence[Example], sample_rate: int = 1000) -> float:
    """Mean absolute stance-time error; a failed decode counts as an error of the whole gold stance."""
    errors = []
    for features, gold in examples:
        predicted = rnn_predict(model, features, sample_rate)
        if isinstance(predicted, DecodeFailure):
            errors.append(gold.stance_time * 1000)
        else:
            errors.append(abs(predicted.stance_time - gold.stance_time) * 1000)
    return float(np.mean(errors))


def rnn_train(
    training: Sequence[Example],
    validation: Sequence[Example],
    *,
    epochs: int = 100,
    patience: int = 10,
    hidden: int = 50,
    layers: int = 2,
    dropout: float = 0.2,
    learning_rate: float = 0.1,
    channels: Literal[2, 4] = 2,
    seed: int = 0,
    constraints: TimingConstraints | None = None,
    feature_config: FeatureConfig | None = None,
    sample_rate: int = 1000,
) -> BiLSTMModel:
    """Per-example AdaGrad on the structural hinge loss with early stopping on validation stance MAE.

    Returns the snapshot of the epoch with the best validation error. Training stops once ``patience``
    consecutive epochs fail to improve on it.

    Raises
    ------
    RejectedConfigError
        No training or no validation examples.
    """
    if not training:
        raise RejectedConfigError('rnn training needs at least one training example')
    if not validation:
        raise RejectedConfigError('rnn training needs a non-empty validation set for early stopping')

    input_size = training[0][0].dimension
    constraints = constraints or TimingConstraints()
    model = BiLSTMModel.initialize(
        input_size,
        hidden,
        layers,
        channels,
        dropout=dropout,
        seed=seed,
        feature_config=feature_config or FeatureConfig.network(),
        constraints=constraints,
        learning_rate=learning_rate,
    )
    state = AdaGradState(learning_rate=learning_rate)
    history = TrainingHistory()
    order_rng = np.random.default_rng(seed)
    best_mae = np.inf
    best_params = model.snapshot()
    stale = 0

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        total_loss = 0.0
        for position, index in enumerate(order_rng.permutation(len(training))):
            features, gold = training[index]
            scores, cache = bilstm_forward(model, features, training=True, rng_seed=(seed, epoch, position))
            loss, upstream = structural_hinge_loss(scores, gold, constraints, sample_rate=sample_rate)
            total_loss += loss
            if loss > 0:
                adagrad_step(state, model.params, bilstm_backward(model, cache, upstream))
                model.version += 1

        mean_loss = total_loss / len(training)
        mae = validation_mae_ms(model, validation, sample_rate)
        history.train_loss.append(mean_loss)
        history.validation_mae_ms.append(mae)
        log.info(
            'rnn epoch %d/%d: loss %.3f, validation stance MAE %.2f ms (%.1fs)',
            epoch,
            epochs,
            mean_loss,
            mae,
            time.perf_counter() - started,
        )

        if mae < best_mae:
            best_mae = mae
            best_params = model.snapshot()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                history.stop_reason = f'no validation improvement for {stale} epoch(s) after epoch {history.best_epoch}'
                log.info('early stopping: %s', history.stop_reason)
                break
    else:
        history.stop_reason = f'reached the epoch limit of {epochs}'

    model.params = best_params
    model.version += 1
    model.history = history
    return model


class TensorPayload(BaseModel):
    shape: list[int]
    values: list[float]


class BiLSTMModelFile(BaseModel):
    format_version: int = FORMAT_VERSION
    kind: Literal['rnn'] = 'rnn'
    feature_names: list[str]
    feature_config: FeatureConfig
    constraints: TimingConstraints
    input_size: int
    hidden: int
    layers: int
    channels: Literal[2, 4]
    dropout: float
    learning_rate: float
    seed: int
    train_loss: list[float]
    validation_mae_ms: list[float]
    best_epoch: int
    stop_reason: str
    tensors: dict[str, TensorPayload]


async def save_rnn(model: BiLSTMModel, file: Path | str) -> None:
    document = BiLSTMModelFile(
        feature_names=list(model.feature_config.feature_names),
        feature_config=model.feature_config,
        constraints=model.constraints,
        input_size=model.input_size,
        hidden=model.hidden,
        layers=model.layers,
        channels=model.channels,
        dropout=model.dropout,
        learning_rate=model.learning_rate,
        seed=model.seed,
        train_loss=model.history.train_loss,
        validation_mae_ms=model.history.validation_mae_ms,
        best_epoch=model.history.best_epoch,
        stop_reason=model.history.stop_reason,
        tensors={
            name: TensorPayload(shape=list(value.shape), values=value.ravel().tolist())
            for name, value in model.params.items()
        },
    )
    await Path(file).write_text(document.model_dump_json(indent=1), encoding='utf-8')


async def load_rnn(file: Path | str) -> BiLSTMModel:
    text = await Path(file).read_text(encoding='utf-8')
    try:
        document = BiLSTMModelFile.model_validate_json(text)
    except ValueError as e:
        raise ModelFormatError(f'{file} is not an rnn model: {e}') from e
    if document.format_version != FORMAT_VERSION:
        raise ModelFormatError(f'{file}: unsupported format version {document.format_version}')
    if document.input_size != len(document.feature_names):
        raise ModelFormatError(f'{file}: input size does not match the feature names')

    expected = BiLSTMModel.initialize(
        document.input_size, document.hidden, document.layers, document.channels, dropout=document.dropout
    ).params
    params: Params = {}
    for name, reference in expected.items():
        payload = document.tensors.get(name)
        if payload is None:
            raise ModelFormatError(f'{file}: missing tensor {name!r}')
        if tuple(payload.shape) != reference.shape or len(payload.values) != reference.size:
            raise ModelFormatError(f'{file}: tensor {name!r} has shape {payload.shape}, expected {reference.shape}')
        params[name] = np.array(payload.values, dtype=np.float64).reshape(reference.shape)

    return BiLSTMModel(
        params=params,
        input_size=document.input_size,
        hidden=document.hidden,
        layers=document.layers,
        channels=document.channels,
        dropout=document.dropout,
        feature_config=document.feature_config,
        constraints=document.constraints,
        learning_rate=document.learning_rate,
        seed=document.seed,
        history=TrainingHistory(
            train_loss=document.train_loss,
            validation_mae_ms=document.validation_mae_ms,
            best_epoch=document.best_epoch,
            stop_reason=document.stop_reason,
        ),
    )


class RnnDetector:
    name = 'rnn'

    def __init__(self, model: BiLSTMModel) -> None:
        self.model = model

    def predict(self, step: Step) -> EventPair | DecodeFailure:
        features = build_features(step, self.model.feature_config)
        return rnn_predict(self.model, features, step.sample_rate)
