from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from gaitevents.cli import EXIT_FAILURE, EXIT_OK, build_parser, main


def _digest(file: Path) -> str:
    return hashlib.sha256(file.read_bytes()).hexdigest()


@pytest.fixture
def dataset(tmp_path: Path) -> Path:
    out = tmp_path / 'data'
    assert main(['generate', '--subjects', '4', '--strides', '3', '--seed', '2', '--out', str(out)]) == EXIT_OK
    return out


@pytest.fixture
def config(tmp_path: Path, dataset: Path) -> Path:
    file = tmp_path / 'run.yaml'
    file.write_text(
        f'manifest: {dataset / "manifest.txt"}\nn_validation: 1\nn_test: 1\nperceptron_epochs: 1\n'
        'rnn_epochs: 2\nrnn_hidden: 2\nrnn_layers: 1\n',
        encoding='utf-8',
    )
    return file


@pytest.mark.parametrize(
    'argv',
    [
        ['generate', '--subjects', '0', '--strides', '3', '--out', 'x'],
        ['generate', '--subjects', '2', '--strides', 'many', '--out', 'x'],
        ['generate', '--subjects', '2', '--strides', '3', '--out', 'x', '--speeds', '-1'],
        ['train', '--method', 'svm', '--config', 'run.yaml', '--out', 'm.json'],
        ['evaluate', '--out', 'x', '--manifest', 'm.txt'],
        ['evaluate', '--out', 'x', '--models', 'models'],
        ['evaluate', '--out', 'x', '--loo'],
        ['frobnicate'],
    ],
)
def test_usage_errors(argv: list[str]) -> None:
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_parser_defaults() -> None:
    args = build_parser().parse_args(['generate', '--subjects', '1', '--strides', '1', '--out', 'x'])
    assert args.seed == 0
    assert args.speeds == [3.2]
    assert args.strides_per_trial == 3


def test_generate_is_deterministic(tmp_path: Path, dataset: Path) -> None:
    assert (dataset / 'manifest.txt').read_text(encoding='utf-8').splitlines() == [
        'S01_T01.csv',
        'S02_T01.csv',
        'S03_T01.csv',
        'S04_T01.csv',
    ]
    assert 'wrote 4 subject(s)' in (dataset / 'gaitevents.log').read_text(encoding='utf-8')

    again = tmp_path / 'again'
    assert main(['generate', '--subjects', '4', '--strides', '3', '--seed', '2', '--out', str(again)]) == EXIT_OK
    for name in ('S01_T01.csv', 'S04_T01.csv', 'truth.csv'):
        assert _digest(dataset / name) == _digest(again / name)


def test_synth_manifest(tmp_path: Path, dataset: Path) -> None:
    out = tmp_path / 'rebuilt.txt'
    assert main(['synth-manifest', '--dir', str(dataset), '--out', str(out)]) == EXIT_OK
    assert len(out.read_text(encoding='utf-8').splitlines()) == 4


def test_synth_manifest_without_recordings(tmp_path: Path) -> None:
    (tmp_path / 'empty').mkdir()
    assert main(['synth-manifest', '--dir', str(tmp_path / 'empty'), '--out', str(tmp_path / 'm.txt')]) == EXIT_FAILURE


def test_train_and_evaluate(tmp_path: Path, config: Path) -> None:
    models = tmp_path / 'models'
    model = models / 'perceptron.json'
    assert main(['train', '--method', 'perceptron', '--config', str(config), '--out', str(model)]) == EXIT_OK
    assert model.is_file()
    training_log = (models / 'perceptron.training.yaml').read_text(encoding='utf-8')
    assert training_log.startswith('method: perceptron\n')
    assert 'mistakes_per_epoch' in training_log

    out = tmp_path / 'eval'
    assert main(['evaluate', '--models', str(models), '--config', str(config), '--out', str(out)]) == EXIT_OK
    for name in ('per_stride_errors.csv', 'summary.csv', 'sensitivity.csv', 'temporal_errors.csv', 'report.yaml'):
        assert (out / name).is_file(), name
    log = (out / 'gaitevents.log').read_text(encoding='utf-8')
    assert 'no rnn model' in log
    assert 'perceptron stance time: MAE' in log


def test_reruns_are_byte_identical(tmp_path: Path, config: Path) -> None:
    for run in ('a', 'b'):
        models = tmp_path / run / 'models'
        for method in ('perceptron', 'rnn'):
            train = ['train', '--method', method, '--config', str(config), '--out', str(models / f'{method}.json')]
            assert main(train) == EXIT_OK
        evaluate = ['evaluate', '--models', str(models), '--config', str(config), '--out', str(tmp_path / run / 'eval')]
        assert main(evaluate) == EXIT_OK

    for name in (
        'models/perceptron.json',
        'models/rnn.json',
        'eval/summary.csv',
        'eval/per_stride_errors.csv',
        'eval/sensitivity.csv',
        'eval/temporal_errors.csv',
    ):
        assert _digest(tmp_path / 'a' / name) == _digest(tmp_path / 'b' / name), name


def test_train_with_a_bad_config(tmp_path: Path) -> None:
    config = tmp_path / 'run.yaml'
    config.write_text('manifest: absent.txt\n', encoding='utf-8')
    out = tmp_path / 'models' / 'rnn.json'
    assert main(['train', '--method', 'rnn', '--config', str(config), '--out', str(out)]) == EXIT_FAILURE
    assert 'train failed' in (tmp_path / 'models' / 'gaitevents.log').read_text(encoding='utf-8')


def test_evaluate_without_models(tmp_path: Path, dataset: Path) -> None:
    (tmp_path / 'models').mkdir()
    argv = ['evaluate', '--models', str(tmp_path / 'models'), '--manifest', str(dataset / 'manifest.txt')]
    assert main([*argv, '--out', str(tmp_path / 'eval')]) == EXIT_FAILURE
    assert 'no learned model found' in (tmp_path / 'eval' / 'gaitevents.log').read_text(encoding='utf-8')


def test_evaluate_empty_manifest(tmp_path: Path, config: Path) -> None:
    models = tmp_path / 'models'
    train = ['train', '--method', 'perceptron', '--config', str(config), '--out', str(models / 'perceptron.json')]
    assert main(train) == EXIT_OK
    empty = tmp_path / 'empty.txt'
    empty.write_text('', encoding='utf-8')

    argv = ['evaluate', '--models', str(models), '--manifest', str(empty), '--out', str(tmp_path / 'eval')]
    assert main(argv) == EXIT_FAILURE
    assert 'lists no recordings' in (tmp_path / 'eval' / 'gaitevents.log').read_text(encoding='utf-8')
