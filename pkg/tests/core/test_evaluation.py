from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from gaitevents.core.dataset import Step
from gaitevents.core.evaluation import (
    PER_STRIDE_HEADER,
    SENSITIVITY_HEADER,
    SUMMARY_HEADER,
    TEMPORAL_HEADER,
    ErrorRecord,
    derived_times,
    evaluate_detectors,
    event_errors,
    impute_failures,
    records_frame,
    sensitivity_curve,
    summarize,
    temporal_errors,
    two_step_median,
    write_evaluation,
)
from gaitevents.core.events import DecodeFailure, EventKind, EventPair, Foot, GaitEvent
from gaitevents.errors import RejectedInputError
from gaitevents.utils import read_yaml


class Oracle:
    name = 'rnn'

    def predict(self, step: Step) -> EventPair | DecodeFailure:
        return step.gold


class Shifted:
    name = 'perceptron'

    def predict(self, step: Step) -> EventPair | DecodeFailure:
        k = step.window_start % 7
        if k == 3:
            return DecodeFailure('no event pair satisfies the timing constraints')
        return EventPair(step.gold_ic + k, step.gold_to + 2 * k, step.sample_rate)


@pytest.fixture(scope='module')
def cohort(steps: list[Step]) -> list[Step]:
    return [replace(step, subject_id=subject) for subject in ('S01', 'S02', 'S03') for step in steps]


def test_event_errors() -> None:
    gold = EventPair(200, 440)
    errors = event_errors(EventPair(205, 430), gold)
    assert (errors.ic_err, errors.to_err, errors.st_err) == (5.0, -10.0, -15.0)
    assert errors.gold_st == 240.0
    assert not errors.failed

    failed = event_errors(DecodeFailure('x'), gold)
    assert failed.failed
    assert failed.st_err is None


def test_event_errors_scale_with_sample_rate() -> None:
    errors = event_errors(EventPair(101, 221, 500), EventPair(100, 220, 500), 500)
    assert errors.ic_err == 2.0
    assert errors.gold_st == 240.0


def test_two_step_median() -> None:
    summary = two_step_median({'a': [1.0, 3.0, 100.0], 'b': [2.0], 'c': []})
    assert summary.value == pytest.approx(2.5)
    assert summary.sd == pytest.approx(np.std([3.0, 2.0], ddof=1))
    assert summary.per_subject == {'a': 3.0, 'b': 2.0}
    with pytest.raises(RejectedInputError):
        two_step_median({'a': []})


def test_sensitivity_curve() -> None:
    rng = np.random.default_rng(0)
    errors = np.abs(rng.normal(0, 10, 300))
    thresholds = list(range(int(np.ceil(errors.max())) + 1))
    curve = [tpr for _, tpr in sensitivity_curve(errors, thresholds)]
    assert all(b >= a for a, b in zip(curve, curve[1:], strict=False))
    assert curve[-1] == 1.0
    assert sensitivity_curve([0.0, 5.0], [0, 4, 5]) == [(0.0, 0.5), (4.0, 0.5), (5.0, 1.0)]
    assert sensitivity_curve([], [0, 1]) == [(0.0, 0.0), (1.0, 0.0)]
    with pytest.raises(RejectedInputError):
        sensitivity_curve([1.0], [5, 1])


def test_impute_failures() -> None:
    records = [
        ErrorRecord(subject_id='S01', speed=3.2, method='m', st_err=10.0, pred_st=250.0, gold_st=240.0),
        ErrorRecord(subject_id='S01', speed=3.2, method='m', st_err=-10.0, pred_st=230.0, gold_st=240.0),
        ErrorRecord(subject_id='S01', speed=3.2, method='m', gold_st=220.0, failed=True),
        ErrorRecord(subject_id='S02', speed=3.2, method='m', gold_st=220.0, failed=True),
    ]
    imputed = impute_failures(records)
    assert imputed[2].imputed
    assert imputed[2].failed
    assert imputed[2].pred_st == 240.0
    assert imputed[2].st_err == 20.0
    assert imputed[2].ic_err is None
    assert not imputed[3].imputed
    assert imputed[3].st_err is None


def test_impute_failures_groups_by_speed_and_method() -> None:
    records = [
        ErrorRecord(subject_id='S01', speed=3.2, method='rnn', st_err=0.0, pred_st=200.0, gold_st=200.0),
        ErrorRecord(subject_id='S01', speed=4.0, method='rnn', st_err=0.0, pred_st=180.0, gold_st=180.0),
        ErrorRecord(subject_id='S01', speed=3.2, method='perceptron', st_err=0.0, pred_st=260.0, gold_st=260.0),
        ErrorRecord(subject_id='S01', speed=3.2, method='rnn', gold_st=210.0, failed=True),
        ErrorRecord(subject_id='S01', speed=4.0, method='perceptron', gold_st=170.0, failed=True),
    ]
    imputed = impute_failures(records)
    assert imputed[3].pred_st == 200.0
    assert imputed[3].st_err == -10.0
    assert not imputed[4].imputed
    assert imputed[:3] == records[:3]
    assert impute_failures([]) == []


def test_records_frame() -> None:
    frame = records_frame([
        ErrorRecord(subject_id='S01', speed=3.2, method='rnn', st_err=1.5, pred_st=241.5, gold_st=240.0),
        ErrorRecord(subject_id='S01', speed=3.2, method='rnn', gold_st=240.0, failed=True),
    ])
    assert list(frame.columns) == list(ErrorRecord.model_fields)
    assert frame['st_err'].isna().tolist() == [False, True]
    assert frame['failed'].dtype == bool
    assert records_frame([]).empty


def test_summarize_perfect_predictions() -> None:
    records = [
        ErrorRecord(subject_id=s, speed=3.2, method='rnn', ic_err=0.0, to_err=0.0, st_err=0.0, pred_st=240.0, gold_st=240.0)
        for s in ('a', 'b')
    ]
    summary = summarize(records, 'rnn', 'st')
    assert summary.mae_ms == 0.0
    assert summary.failed_pct == 0.0

    empty = summarize(records, 'perceptron', 'st')
    assert empty.mae_ms is None


def test_derived_times() -> None:
    events = [
        GaitEvent(EventKind.IC, Foot.RIGHT, 0, 1000),
        GaitEvent(EventKind.TO, Foot.RIGHT, 240, 1000),
        GaitEvent(EventKind.IC, Foot.LEFT, 350, 1000),
        GaitEvent(EventKind.TO, Foot.LEFT, 590, 1000),
        GaitEvent(EventKind.IC, Foot.RIGHT, 700, 1000),
    ]
    values = {(v.parameter, v.foot, v.start): v.value_ms for v in derived_times(events)}
    assert values['stride', Foot.RIGHT, 0] == 700.0
    assert values['step', Foot.RIGHT, 0] == 350.0
    assert values['swing', Foot.RIGHT, 240] == 460.0
    assert values['step', Foot.LEFT, 350] == 350.0
    assert values['stride', Foot.LEFT, 350] is None


@pytest.mark.anyio
async def test_evaluate_oracle(steps: list[Step]) -> None:
    records, predictions = await evaluate_detectors([Oracle()], steps, workers=2)
    assert len(records) == len(steps)
    assert all(r.st_err == 0.0 and not r.failed for r in records)
    assert predictions['rnn'] == [step.gold for step in steps]

    rows = temporal_errors(steps, predictions)
    assert rows
    assert {row['parameter'] for row in rows} == {'stride', 'step', 'swing'}
    assert all(row['err_ms'] == 0.0 for row in rows)


@pytest.mark.anyio
async def test_write_evaluation(cohort: list[Step], tmp_path: Path) -> None:
    records, predictions = await evaluate_detectors([Oracle(), Shifted()], cohort, workers=4)
    records = impute_failures(records)
    summaries = await write_evaluation(
        records, tmp_path, methods=['rnn', 'perceptron'], temporal_rows=temporal_errors(cohort, predictions)
    )

    with (tmp_path / 'summary.csv').open(encoding='utf-8') as f:
        assert f.readline().strip() == ','.join(SUMMARY_HEADER)
    with (tmp_path / 'per_stride_errors.csv').open(encoding='utf-8') as f:
        assert f.readline().strip() == ','.join(PER_STRIDE_HEADER)
    with (tmp_path / 'sensitivity.csv').open(encoding='utf-8') as f:
        assert f.readline().strip() == ','.join(SENSITIVITY_HEADER)
    with (tmp_path / 'temporal_errors.csv').open(encoding='utf-8') as f:
        assert f.readline().strip() == ','.join(TEMPORAL_HEADER)

    oracle = next(s for s in summaries if s.method == 'rnn' and s.target == 'st')
    assert oracle.mae_ms == 0.0
    assert oracle.failed_pct == 0.0

    # summary MAE equals the two-step median recomputed from the per-stride file
    per_stride = pd.read_csv(tmp_path / 'per_stride_errors.csv')
    perceptron_rows = per_stride[per_stride['method'] == 'perceptron']
    for target in ('ic', 'to', 'st'):
        errors = perceptron_rows.dropna(subset=[f'{target}_err'])
        by_subject = errors[f'{target}_err'].abs().groupby(errors['subject']).apply(list).to_dict()
        summary = next(s for s in summaries if s.method == 'perceptron' and s.target == target)
        assert summary.mae_ms == pytest.approx(two_step_median(by_subject).value, rel=1e-12)

    failed = perceptron_rows[perceptron_rows['failed'] == 1]
    perceptron = next(s for s in summaries if s.method == 'perceptron' and s.target == 'st')
    assert perceptron.failed_pct == pytest.approx(100 * len(failed) / len(cohort))
    assert (perceptron_rows['imputed'] <= perceptron_rows['failed']).all()

    sensitivity = pd.read_csv(tmp_path / 'sensitivity.csv', dtype=str, keep_default_na=False)
    assert sensitivity['tpr_rnn'].iloc[-1] == '1.000000'
    assert (sensitivity['tpr_mmethod'] == '').all()
    assert sensitivity['tpr_perceptron'].astype(float).is_monotonic_increasing

    report = await read_yaml(tmp_path / 'report.yaml')
    assert report['rnn']['steps'] == len(cohort)
    assert report['rnn']['reference_st_mae_ms'] == 6.5
    assert report['perceptron']['failed'] == len(failed)
