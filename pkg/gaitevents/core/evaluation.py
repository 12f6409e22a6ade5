from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, NamedTuple, Protocol

import anyio
import numpy as np
import pandas as pd
from anyio import Path
from pydantic import BaseModel

from gaitevents.errors import RejectedInputError
from gaitevents.utils import save_yaml, write_csv

from .events import DecodeFailure, EventKind, EventPair, Foot, GaitEvent

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    from .dataset import Step

__all__ = (
    'PER_STRIDE_HEADER',
    'SENSITIVITY_HEADER',
    'SUMMARY_HEADER',
    'Detector',
    'ErrorRecord',
    'EventErrors',
    'MedianSummary',
    'SummaryStats',
    'TemporalValue',
    'derived_times',
    'event_errors',
    'evaluate_detectors',
    'impute_failures',
    'records_frame',
    'sensitivity_curve',
    'summarize',
    'temporal_errors',
    'two_step_median',
    'write_evaluation',
)

log = logging.getLogger('gaitevents.evaluation')

type Target = Literal['ic', 'to', 'st']
type Parameter = Literal['stride', 'step', 'swing']

SUMMARY_HEADER = ('method', 'target', 'mae_ms', 'mre_ms', 'sd_ms', 'iqr_lo_ms', 'iqr_hi_ms', 'failed_pct')
PER_STRIDE_HEADER = ('subject', 'speed', 'method', 'ic_err', 'to_err', 'st_err', 'failed', 'imputed')
SENSITIVITY_HEADER = ('threshold_ms', 'tpr_mmethod', 'tpr_perceptron', 'tpr_rnn')
TEMPORAL_HEADER = ('subject', 'speed', 'method', 'parameter', 'err_ms')
TARGETS: tuple[Target, ...] = ('ic', 'to', 'st')

# published stance-time MAE, attached to reports for context only
REFERENCE_ST_MAE_MS = {'rnn': 6.50, 'perceptron': 10.00, 'm_method': 11.25}


class ErrorRecord(BaseModel):
    """Errors of one method on one stride, in milliseconds, signed as predicted minus reference."""

    subject_id: str
    speed: float
    method: str
    trial_id: str = ''
    window_start: int = 0
    ic_err: float | None = None
    to_err: float | None = None
    st_err: float | None = None
    pred_st: float | None = None
    gold_st: float
    failed: bool = False
    imputed: bool = False
    inference_ms: float = 0.0


class EventErrors(NamedTuple):
    ic_err: float | None
    to_err: float | None
    st_err: float | None
    pred_st: float | None
    gold_st: float
    failed: bool


def event_errors(predicted: EventPair | DecodeFailure, gold: EventPair, sample_rate: int = 1000) -> EventErrors:
    """Relative errors in ms; positive means the detected event lags the reference or stance is overestimated."""
    to_ms = 1000 / sample_rate
    gold_st = gold.stance_samples * to_ms
    if isinstance(predicted, DecodeFailure):
        return EventErrors(None, None, None, None, gold_st, failed=True)
    pred_st = predicted.stance_samples * to_ms
    return EventErrors(
        ic_err=(predicted.ic_index - gold.ic_index) * to_ms,
        to_err=(predicted.to_index - gold.to_index) * to_ms,
        st_err=pred_st - gold_st,
        pred_st=pred_st,
        gold_st=gold_st,
        failed=False,
    )


@dataclass(frozen=True, slots=True)
class TemporalValue:
    parameter: Parameter
    foot: Foot
    start: int
    end: int | None
    value_ms: float | None


def derived_times(events: Iterable[GaitEvent]) -> list[TemporalValue]:
    """Stride (IC to next own IC), step (IC to next opposite IC) and swing (TO to next own IC) times.

    Values whose successor event is missing are reported with ``value_ms`` of ``None``.
    """
    ordered = sorted(events, key=lambda e: e.index)
    values: list[TemporalValue] = []

    def next_ic(after: GaitEvent, foot: Foot) -> GaitEvent | None:
        return next((e for e in ordered if e.kind is EventKind.IC and e.foot is foot and e.index > after.index), None)

    def value(parameter: Parameter, start: GaitEvent, end: GaitEvent | None) -> TemporalValue:
        if end is None:
            return TemporalValue(parameter, start.foot, start.index, None, None)
        return TemporalValue(parameter, start.foot, start.index, end.index, (end.index - start.index) * 1000 / start.sample_rate)

    for event in ordered:
        if event.kind is EventKind.IC:
            values.append(value('stride', event, next_ic(event, event.foot)))
            values.append(value('step', event, next_ic(event, event.foot.opposite)))
        else:
            values.append(value('swing', event, next_ic(event, event.foot)))
    return values


_ERROR_COLUMNS = ('ic_err', 'to_err', 'st_err', 'pred_st', 'gold_st', 'inference_ms')
_IMPUTATION_KEYS = ['subject_id', 'speed', 'method']


def records_frame(records: Sequence[ErrorRecord]) -> pd.DataFrame:
    """One row per record; missing errors are ``NaN``."""
    frame = pd.DataFrame([r.model_dump() for r in records], columns=list(ErrorRecord.model_fields))
    return frame.astype({column: 'float64' for column in _ERROR_COLUMNS} | {'failed': bool, 'imputed': bool})


def impute_failures(records: Sequence[ErrorRecord]) -> list[ErrorRecord]:
    """Replace failed stance estimates with the mean of the method's own successful estimates for that
    subject and speed. Failures without any such estimate stay failed and unimputed.
    """
    if not records:
        return []
    frame = records_frame(records)
    successful = frame['pred_st'].where(~frame['failed'])
    means = successful.groupby([frame[key] for key in _IMPUTATION_KEYS]).transform('mean')
    imputable = frame['failed'] & ~frame['imputed'] & means.notna()

    imputed = []
    for record, pred_st, fill in zip(records, means, imputable, strict=True):
        if fill:
            mean_st = float(pred_st)
            record = record.model_copy(update={'pred_st': mean_st, 'st_err': mean_st - record.gold_st, 'imputed': True})
        imputed.append(record)
    return imputed


class MedianSummary(NamedTuple):
    value: float
    sd: float
    per_subject: dict[str, float]


def _median_of_medians(medians: pd.Series) -> MedianSummary:
    sd = float(medians.std(ddof=1)) if len(medians) > 1 else 0.0
    return MedianSummary(float(medians.median()), sd, {str(k): float(v) for k, v in medians.items()})


def two_step_median(values_by_subject: Mapping[str, Sequence[float]]) -> MedianSummary:
    """Median of per-subject medians; ``sd`` is the sample standard deviation of the per-subject medians.

    Raises
    ------
    RejectedInputError
        No subject has any value.
    """
    values = pd.DataFrame(
        [(subject, float(value)) for subject, subject_values in values_by_subject.items() for value in subject_values],
        columns=['subject', 'value'],
    )
    if values.empty:
        raise RejectedInputError('two-step median needs at least one subject with one value')
    return _median_of_medians(values.groupby('subject', sort=False)['value'].median())


def sensitivity_curve(abs_errors: Sequence[float], thresholds: Sequence[float]) -> list[tuple[float, float]]:
    """True-positive ratio per threshold: the share of strides whose absolute error is within it."""
    if any(t < 0 for t in thresholds) or list(thresholds) != sorted(thresholds):
        raise RejectedInputError('thresholds must be non-negative and sorted')
    errors = np.sort(np.abs(np.asarray(abs_errors, dtype=np.float64)))
    if errors.size == 0:
        return [(float(t), 0.0) for t in thresholds]
    counts = np.searchsorted(errors, np.asarray(thresholds, dtype=np.float64), side='right')
    return [(float(t), float(c / errors.size)) for t, c in zip(thresholds, counts, strict=True)]


class SummaryStats(BaseModel):
    method: str
    target: Target
    mae_ms: float | None
    mre_ms: float | None
    sd_ms: float | None
    iqr_lo_ms: float | None
    iqr_hi_ms: float | None
    failed_pct: float


def summarize(records: Sequence[ErrorRecord], method: str, target: Target) -> SummaryStats:
    """Two-step median absolute and relative error, their spread, pooled IQR and failure rate of one method."""
    frame = records_frame(records)
    own = frame[frame['method'] == method]
    failed_pct = 100 * float(own['failed'].mean()) if len(own) else 0.0
    errors = own[f'{target}_err'].dropna()
    if errors.empty:
        return SummaryStats(
            method=method, target=target, mae_ms=None, mre_ms=None, sd_ms=None, iqr_lo_ms=None, iqr_hi_ms=None, failed_pct=failed_pct
        )
    subjects = own.loc[errors.index, 'subject_id']
    mae = _median_of_medians(errors.abs().groupby(subjects, sort=False).median())
    mre = _median_of_medians(errors.groupby(subjects, sort=False).median())
    lo, hi = errors.quantile([0.25, 0.75])
    return SummaryStats(
        method=method,
        target=target,
        mae_ms=mae.value,
        mre_ms=mre.value,
        sd_ms=mae.sd,
        iqr_lo_ms=float(lo),
        iqr_hi_ms=float(hi),
        failed_pct=failed_pct,
    )


class Detector(Protocol):
    name: str

    def predict(self, step: Step) -> EventPair | DecodeFailure: ...


def _timed(detector: Detector, step: Step) -> tuple[EventPair | DecodeFailure, float]:
    started = time.perf_counter()
    predicted = detector.predict(step)
    return predicted, (time.perf_counter() - started) * 1000


async def _predict_all(
    detector: Detector, steps: Sequence[Step], limiter: anyio.CapacityLimiter
) -> list[tuple[EventPair | DecodeFailure, float]]:
    results: list[tuple[EventPair | DecodeFailure, float] | None] = [None] * len(steps)

    async def run_one(index: int, step: Step) -> None:
        results[index] = await anyio.to_thread.run_sync(_timed, detector, step, limiter=limiter)

    async with anyio.create_task_group() as tg:
        for index, step in enumerate(steps):
            tg.start_soon(run_one, index, step)
    return [r for r in results if r is not None]


async def evaluate_detectors(
    detectors: Sequence[Detector],
    steps: Sequence[Step],
    *,
    workers: int = 4,
) -> tuple[list[ErrorRecord], dict[str, list[EventPair | DecodeFailure]]]:
    """Run every detector on every step in worker threads; results keep the order of ``steps``.

    Returns the error records (failures not yet imputed) and the raw window-relative predictions per method.
    """
    limiter = anyio.CapacityLimiter(workers)
    records: list[ErrorRecord] = []
    predictions: dict[str, list[EventPair | DecodeFailure]] = {}

    for detector in detectors:
        name = detector.name
        results = await _predict_all(detector, steps, limiter)
        method_predictions: list[EventPair | DecodeFailure] = []
        for step, (predicted, elapsed) in zip(steps, results, strict=True):
            errors = event_errors(predicted, step.gold, step.sample_rate)
            records.append(
                ErrorRecord(
                    subject_id=step.subject_id,
                    speed=step.speed,
                    method=name,
                    trial_id=step.trial_id,
                    window_start=step.window_start,
                    ic_err=errors.ic_err,
                    to_err=errors.to_err,
                    st_err=errors.st_err,
                    pred_st=errors.pred_st,
                    gold_st=errors.gold_st,
                    failed=errors.failed,
                    inference_ms=elapsed,
                )
            )
            method_predictions.append(predicted)
        predictions[name] = method_predictions
        failed = sum(isinstance(p, DecodeFailure) for p in method_predictions)
        log.info('%s: %d steps, %d failed', name, len(steps), failed)

    return records, predictions


def temporal_errors(
    steps: Sequence[Step],
    predictions: Mapping[str, Sequence[EventPair | DecodeFailure]],
) -> list[dict[str, object]]:
    """Step, stride and swing time errors per method, from reference and predicted events of each trial.

    A derived value is compared only when the predicted events of both its steps exist.
    """
    rows: list[dict[str, object]] = []
    keys = pd.DataFrame({'subject': [s.subject_id for s in steps], 'trial': [s.trial_id for s in steps]})
    trials = {key: group.index.tolist() for key, group in keys.groupby(['subject', 'trial'], sort=False)}

    for method, predicted in predictions.items():
        for (subject, _), indices in trials.items():
            gold_events: list[GaitEvent] = []
            pred_events: list[GaitEvent] = []
            # predicted index -> reference index of the same event
            to_gold: dict[tuple[Foot, int], int] = {}
            for index in indices:
                step = steps[index]
                foot = step.source_foot
                gold = step.gold.shifted(step.window_start)
                gold_events += [
                    GaitEvent(EventKind.IC, foot, gold.ic_index, step.sample_rate),
                    GaitEvent(EventKind.TO, foot, gold.to_index, step.sample_rate),
                ]
                pair = predicted[index]
                if isinstance(pair, DecodeFailure):
                    continue
                pair = pair.shifted(step.window_start)
                pred_events += [
                    GaitEvent(EventKind.IC, foot, pair.ic_index, step.sample_rate),
                    GaitEvent(EventKind.TO, foot, pair.to_index, step.sample_rate),
                ]
                to_gold[foot, pair.ic_index] = gold.ic_index
                to_gold[foot, pair.to_index] = gold.to_index

            reference = {
                (v.parameter, v.foot, v.start, v.end): v.value_ms for v in derived_times(gold_events) if v.end is not None
            }
            for value in derived_times(pred_events):
                if value.value_ms is None or value.end is None:
                    continue
                end_foot = value.foot.opposite if value.parameter == 'step' else value.foot
                start = to_gold.get((value.foot, value.start))
                end = to_gold.get((end_foot, value.end))
                if start is None or end is None:
                    continue
                gold_value = reference.get((value.parameter, value.foot, start, end))
                if gold_value is None:
                    continue
                rows.append({
                    'subject': subject,
                    'speed': steps[indices[0]].speed,
                    'method': method,
                    'parameter': value.parameter,
                    'err_ms': value.value_ms - gold_value,
                })
    return rows


async def write_evaluation(
    records: Sequence[ErrorRecord],
    out: Path | str,
    *,
    methods: Sequence[str],
    temporal_rows: Sequence[Mapping[str, object]] = (),
) -> list[SummaryStats]:
    """Write the per-stride, summary, sensitivity and temporal CSVs and the report YAML under ``out``."""
    out = Path(out)
    await out.mkdir(parents=True, exist_ok=True)
    frame = records_frame(records)

    per_stride = frame.rename(columns={'subject_id': 'subject'})[list(PER_STRIDE_HEADER)]
    await write_csv(per_stride.astype({'failed': int, 'imputed': int}), out / 'per_stride_errors.csv')

    summaries = [summarize(records, method, target) for method in methods for target in TARGETS]
    summary = pd.DataFrame([s.model_dump() for s in summaries], columns=list(SUMMARY_HEADER))
    await write_csv(summary, out / 'summary.csv')

    st_errors = {m: frame.loc[frame['method'] == m, 'st_err'].dropna().abs().tolist() for m in methods}
    largest = max((max(e) for e in st_errors.values() if e), default=0.0)
    thresholds = list(range(max(50, math.ceil(largest)) + 1))
    columns = {'m_method': 'tpr_mmethod', 'perceptron': 'tpr_perceptron', 'rnn': 'tpr_rnn'}
    sensitivity = pd.DataFrame({'threshold_ms': thresholds})
    for method, errors in st_errors.items():
        if method in columns:
            sensitivity[columns[method]] = [tpr for _, tpr in sensitivity_curve(errors, thresholds)]
    await write_csv(
        sensitivity.reindex(columns=list(SENSITIVITY_HEADER)), out / 'sensitivity.csv', float_format='%.6f'
    )

    temporal = pd.DataFrame(list(temporal_rows), columns=list(TEMPORAL_HEADER))
    await write_csv(temporal, out / 'temporal_errors.csv')

    report = {}
    for method in methods:
        own = frame[frame['method'] == method]
        report[method] = {
            'steps': len(own),
            'failed': int(own['failed'].sum()),
            'imputed': int(own['imputed'].sum()),
            'mean_inference_ms': float(own['inference_ms'].mean()) if len(own) else None,
            'reference_st_mae_ms': REFERENCE_ST_MAE_MS.get(method),
        }
    await save_yaml(report, out / 'report.yaml')
    return summaries
