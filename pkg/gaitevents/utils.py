from __future__ import annotations

from typing import TYPE_CHECKING, Any

import yaml
from anyio import Path

from gaitevents.errors import RejectedInputError

if TYPE_CHECKING:
    from collections.abc import Mapping

    import pandas as pd

__all__ = (
    'read_flat_yaml',
    'read_yaml',
    'save_yaml',
    'write_csv',
)


async def save_yaml(data: Mapping[str, Any], file: Path | str) -> None:
    """
    Save a mapping to a YAML file, keeping key order.

    Parameters
    ----------
    data : Mapping[str, Any]
        The mapping to save.
    file : anyio.Path | str
        The file path where the YAML content will be written.
    """
    file = Path(file)
    yaml_text = yaml.safe_dump(dict(data), indent=4, allow_unicode=True, sort_keys=False)
    await file.write_text(yaml_text, encoding='utf-8')


async def read_yaml(file: Path | str) -> Any:
    """
    Read a YAML file and return its content.

    Parameters
    ----------
    file : anyio.Path | str
        The file path to read the YAML content from.

    Returns
    -------
    Any
        The content of the YAML file.
    """
    file = Path(file)
    yaml_text = await file.read_text(encoding='utf-8')
    return yaml.safe_load(yaml_text)


async def read_flat_yaml(file: Path | str) -> dict[str, Any]:
    """Read a flat key-value YAML file, rejecting nested mappings."""
    data = await read_yaml(file)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise RejectedInputError(f'{file}: expected a key-value mapping, got {type(data).__name__}')
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise RejectedInputError(f'{file}: nested keys are not allowed: {", ".join(map(str, nested))}')
    return {str(key): value for key, value in data.items()}


async def write_csv(frame: pd.DataFrame, file: Path | str, *, float_format: str | None = None) -> None:
    """
    Write a frame as CSV without its index; missing values become empty cells.

    Parameters
    ----------
    frame : pandas.DataFrame
        The table to write, columns in output order.
    file : anyio.Path | str
        The file path where the CSV will be written.
    float_format : str | None
        A printf-style format for float columns; the shortest round-trip repr when omitted.
    """
    text = frame.to_csv(index=False, lineterminator='\n', na_rep='', float_format=float_format)
    await Path(file).write_text(text, encoding='utf-8')
