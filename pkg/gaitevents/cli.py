from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING

import anyio

from gaitevents.core.config import RunConfig, settings
from gaitevents.core.synthgen import generate_dataset, rebuild_manifest
from gaitevents.errors import GaitEventsError
from gaitevents.logging import setup_logging
from gaitevents.pipeline import evaluate_leave_one_out, evaluate_models, train_method

if TYPE_CHECKING:
    from collections.abc import Sequence

__all__ = (
    'build_parser',
    'main',
    'run',
)

log = logging.getLogger('gaitevents.cli')

EXIT_OK = 0
EXIT_FAILURE = 1


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'{text!r} is not an integer') from None
    if value < 1:
        raise argparse.ArgumentTypeError(f'must be at least 1, got {value}')
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'{text!r} is not a number') from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f'must be positive, got {value}')
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='gaitevents',
        description='Running gait event detection from bilateral tibial acceleration.',
    )
    parser.add_argument('--log-level', default=settings.LOG_LEVEL, help='root logger level (default: %(default)s)')
    commands = parser.add_subparsers(dest='command', required=True)

    generate = commands.add_parser('generate', help='write a synthetic dataset with force-plate reference events')
    generate.add_argument('--subjects', type=_positive_int, required=True)
    generate.add_argument('--strides', type=_positive_int, required=True, help='strides per subject')
    generate.add_argument('--seed', type=int, default=0)
    generate.add_argument('--out', type=Path, required=True)
    generate.add_argument('--strides-per-trial', type=_positive_int, default=3)
    generate.add_argument('--speeds', type=_positive_float, nargs='+', default=[3.2], help='trial speeds in m/s')
    generate.add_argument('--noise', type=float, default=0.15, help='sensor noise std in g')

    manifest = commands.add_parser('synth-manifest', help='rebuild a manifest from the recordings in a directory')
    manifest.add_argument('--dir', type=Path, required=True)
    manifest.add_argument('--out', type=Path, required=True)

    train = commands.add_parser('train', help='train a learned method')
    train.add_argument('--method', choices=('perceptron', 'rnn'), required=True)
    train.add_argument('--config', type=Path, required=True)
    train.add_argument('--out', type=Path, required=True, help='model file to write')

    evaluate = commands.add_parser('evaluate', help='evaluate all methods against the reference events')
    evaluate.add_argument('--models', type=Path, help='directory holding perceptron.json and rnn.json')
    evaluate.add_argument('--manifest', type=Path)
    evaluate.add_argument('--out', type=Path, required=True)
    evaluate.add_argument('--subjects', nargs='+', help='restrict evaluation to these subjects')
    evaluate.add_argument('--config', type=Path, help='run config; its test split is used when --subjects is absent')
    evaluate.add_argument('--loo', action='store_true', help='leave-one-subject-out retraining (requires --config)')
    evaluate.add_argument('--workers', type=_positive_int, default=settings.WORKERS)
    return parser


def _check_evaluate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.loo:
        if args.config is None:
            parser.error('--loo requires --config')
        return
    if args.models is None:
        parser.error('evaluate requires --models unless --loo is given')
    if args.manifest is None and args.config is None:
        parser.error('evaluate requires --manifest or --config')


def _output_directory(args: argparse.Namespace) -> Path:
    if args.command in {'train', 'synth-manifest'}:
        return args.out.parent
    return args.out


async def _generate(args: argparse.Namespace) -> None:
    manifest = await generate_dataset(
        args.out,
        subjects=args.subjects,
        strides=args.strides,
        seed=args.seed,
        strides_per_trial=args.strides_per_trial,
        speeds=tuple(args.speeds),
        noise_std_g=args.noise,
    )
    log.info('wrote %d subject(s) and manifest %s', args.subjects, manifest)


async def _synth_manifest(args: argparse.Namespace) -> None:
    files = await rebuild_manifest(args.dir, args.out)
    log.info('manifest %s lists %d recording(s)', args.out, len(files))


async def _train(args: argparse.Namespace) -> None:
    config = await RunConfig.from_file(args.config)
    await train_method(args.method, config, args.out)


async def _evaluate(args: argparse.Namespace) -> None:
    config = await RunConfig.from_file(args.config) if args.config is not None else None
    if args.loo and config is not None:
        summaries = await evaluate_leave_one_out(config, args.out, workers=args.workers)
    else:
        manifest = args.manifest if args.manifest is not None else config.manifest  # type: ignore[union-attr]
        summaries = await evaluate_models(
            args.models, manifest, args.out, subjects=args.subjects, config=config, workers=args.workers
        )

    for summary in summaries:
        if summary.target == 'st':
            log.info(
                '%s stance time: MAE %s ms, failed %.1f%%',
                summary.method,
                'n/a' if summary.mae_ms is None else f'{summary.mae_ms:.2f}',
                summary.failed_pct,
            )


COMMANDS = {
    'generate': _generate,
    'synth-manifest': _synth_manifest,
    'train': _train,
    'evaluate': _evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the command and return its exit code.

    Usage errors exit with 2 through argparse; runtime failures are logged and return 1.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == 'evaluate':
        _check_evaluate(parser, args)

    with setup_logging(args.log_level, directory=_output_directory(args)):
        try:
            anyio.run(COMMANDS[args.command], args)
        except (GaitEventsError, OSError) as e:
            log.error('%s failed: %s', args.command, e)  # noqa: TRY400
            return EXIT_FAILURE
    return EXIT_OK


def run() -> None:
    sys.exit(main())
