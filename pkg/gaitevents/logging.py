from __future__ import annotations

import contextlib
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Generator

__all__ = ('setup_logging',)


class RemoveNoise(logging.Filter):
    """Drop the per-iteration chatter numpy and scipy emit through the warnings logger."""

    def __init__(self) -> None:
        super().__init__(name='py.warnings')

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        return not (record.levelname == 'WARNING' and 'invalid value encountered' in message)


@contextlib.contextmanager
def setup_logging(level: int | str = logging.INFO, directory: Path | str | None = None) -> Generator[None]:
    """Install the stream and rotating file handlers for the duration of a run.

    Parameters
    ----------
    level : int | str
        Root logger level.
    directory : Path | str | None
        Directory receiving ``gaitevents.log``. Defaults to ``logs``.
    """
    log = logging.getLogger()

    try:
        # __enter__
        max_bytes = 32 * 1024 * 1024  # 32 MiB

        logging.captureWarnings(True)
        logging.getLogger('py.warnings').addFilter(RemoveNoise())
        logging.getLogger('asyncio').setLevel(logging.WARNING)

        log.setLevel(level)

        dt_fmt = '%Y-%m-%d %H:%M:%S'
        fmt = logging.Formatter('[{asctime}] [{levelname:<7}] {name}: {message}', dt_fmt, style='{')

        stream_handler = logging.StreamHandler(sys.stderr)
        stream_handler.setFormatter(fmt)
        log.addHandler(stream_handler)

        directory = Path(directory) if directory is not None else Path('logs')
        if not directory.exists():
            directory.mkdir(parents=True, exist_ok=True)

        rotating_file_handler = RotatingFileHandler(
            filename=directory / 'gaitevents.log',
            encoding='utf-8',
            mode='w',
            maxBytes=max_bytes,
            backupCount=5,
        )
        rotating_file_handler.setFormatter(fmt)
        log.addHandler(rotating_file_handler)

        yield
    finally:
        # __exit__
        logging.captureWarnings(False)
        handlers = log.handlers[:]
        for handler in handlers:
            handler.close()
            log.removeHandler(handler)
