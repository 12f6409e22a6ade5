from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from gaitevents.core.evaluation import Detector
from gaitevents.errors import ModelFormatError

from .heuristic import MMethodDetector
from .neural import RnnDetector, load_rnn
from .structperc import PerceptronDetector, load_perceptron

if TYPE_CHECKING:
    from anyio import Path

__all__ = (
    'METHODS',
    'MODEL_FILES',
    'Detector',
    'load_detectors',
)

log = logging.getLogger('gaitevents.methods')

METHODS = ('m_method', 'perceptron', 'rnn')
MODEL_FILES = {'perceptron': 'perceptron.json', 'rnn': 'rnn.json'}


async def load_detectors(models: Path) -> list[Detector]:
    """The M-method plus every learned detector whose model file exists in ``models``.

    A missing or unreadable model is skipped with a warning.
    """
    detectors: list[Detector] = [MMethodDetector()]
    for method, filename in MODEL_FILES.items():
        file = models / filename
        if not await file.is_file():
            log.warning('no %s model at %s, skipping that method', method, file)
            continue
        try:
            if method == 'perceptron':
                detectors.append(PerceptronDetector(await load_perceptron(file)))
            else:
                detectors.append(RnnDetector(await load_rnn(file)))
        except ModelFormatError as e:
            log.warning('failed to load %s model: %s', method, e)
            continue
        log.info('loaded %s model from %s', method, file)
    return detectors
