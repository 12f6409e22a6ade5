from __future__ import annotations

from typing import TYPE_CHECKING

import pandas as pd
import pytest
from anyio import Path as AnyioPath

from gaitevents.errors import RejectedInputError
from gaitevents.utils import read_flat_yaml, read_yaml, save_yaml, write_csv

if TYPE_CHECKING:
    from pathlib import Path


@pytest.mark.anyio
async def test_save_yaml_keeps_key_order(tmp_path: Path) -> None:
    file_path = AnyioPath(tmp_path / 'test.yaml')

    await save_yaml({'zeta': 1, 'alpha': [1.5, 2.5]}, file_path)

    content = await file_path.read_text(encoding='utf-8')
    assert content.index('zeta') < content.index('alpha')
    assert await read_yaml(file_path) == {'zeta': 1, 'alpha': [1.5, 2.5]}


@pytest.mark.anyio
async def test_save_yaml_string_path(tmp_path: Path) -> None:
    file_path = AnyioPath(tmp_path / 'test.yaml')

    await save_yaml({'key': 'value'}, file_path.as_posix())

    assert await file_path.exists()
    assert 'key: value' in await file_path.read_text(encoding='utf-8')


@pytest.mark.anyio
async def test_read_yaml(tmp_path: Path) -> None:
    file_path = AnyioPath(tmp_path / 'test.yaml')

    async with await file_path.open('w', encoding='utf-8') as f:
        await f.write('key: value')

    assert await read_yaml(file_path) == {'key': 'value'}
    assert await read_yaml(file_path.as_posix()) == {'key': 'value'}


@pytest.mark.anyio
async def test_read_flat_yaml(tmp_path: Path) -> None:
    file_path = AnyioPath(tmp_path / 'flat.yaml')
    await file_path.write_text('a: 1\nb: [x, y]\n', encoding='utf-8')
    assert await read_flat_yaml(file_path) == {'a': 1, 'b': ['x', 'y']}

    await file_path.write_text('', encoding='utf-8')
    assert await read_flat_yaml(file_path) == {}


@pytest.mark.anyio
@pytest.mark.parametrize('text', ['a:\n  b: 1\n', '- 1\n- 2\n'])
async def test_read_flat_yaml_rejects(tmp_path: Path, text: str) -> None:
    file_path = AnyioPath(tmp_path / 'nested.yaml')
    await file_path.write_text(text, encoding='utf-8')
    with pytest.raises(RejectedInputError):
        await read_flat_yaml(file_path)


@pytest.mark.anyio
async def test_write_csv(tmp_path: Path) -> None:
    file_path = AnyioPath(tmp_path / 'rows.csv')
    await write_csv(pd.DataFrame({'a': [1, 2], 'b': [None, 2.5]}), file_path)
    assert await file_path.read_text(encoding='utf-8') == 'a,b\n1,\n2,2.5\n'


@pytest.mark.anyio
async def test_write_csv_float_format(tmp_path: Path) -> None:
    file_path = AnyioPath(tmp_path / 'rows.csv')
    await write_csv(pd.DataFrame({'x': [0.1, 1 / 3], 'label': ['p', 'q']}), file_path, float_format='%.3f')
    assert await file_path.read_text(encoding='utf-8') == 'x,label\n0.100,p\n0.333,q\n'
