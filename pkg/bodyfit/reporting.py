#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Запись результатов: атомарная запись файлов, CSV через pandas
и отформатированные таблицы Excel через openpyxl.
"""

import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Union

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Border, Font, Side
from openpyxl.utils import get_column_letter

from bodyfit.io_config import canonical_json

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "0.000"
MIN_COLUMN_WIDTH = 8
MAX_COLUMN_WIDTH = 40
FIXED_TIMESTAMP = datetime(2000, 1, 1)


def _replace_atomic(path: Path, write) -> Path:
    """Пишет во временный файл рядом с целью и переименовывает его"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        write(Path(temp))
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.remove(temp)
        raise
    return path


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    def write(temp: Path):
        with open(temp, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)

    return _replace_atomic(Path(path), write)


def write_json_atomic(path: Union[str, Path], data: Any) -> Path:
    """JSON в канонической форме"""
    path = write_text_atomic(path, canonical_json(data))
    logger.info(f"Сохранен файл: {path}")
    return path


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def write_frame_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = write_text_atomic(path, frame_to_csv(frame))
    logger.info(f"Сохранена таблица {len(frame)} строк: {path}")
    return path


def _save_with_openpyxl_formatting(frame: pd.DataFrame, target: Path, sheet_name: str) -> None:
    workbook = Workbook()
    worksheet = workbook.active
    worksheet.title = sheet_name
    workbook.properties.created = FIXED_TIMESTAMP
    workbook.properties.modified = FIXED_TIMESTAMP

    border = Border(left=Side(style='thin'), right=Side(style='thin'),
                    top=Side(style='thin'), bottom=Side(style='thin'))
    widths = {}
    rows = [list(frame.columns)] + [list(row) for row in frame.itertuples(index=False, name=None)]
    for row_idx, row in enumerate(rows, start=1):
        for col_idx, value in enumerate(row, start=1):
            cell = worksheet.cell(row=row_idx, column=col_idx)
            value = value.item() if hasattr(value, "item") else value
            if value is None or (not isinstance(value, str) and pd.isna(value)):
                cell.value = None
            else:
                cell.value = int(value) if isinstance(value, bool) else value
            if isinstance(cell.value, float):
                cell.number_format = FLOAT_FORMAT
            cell.border = border
            cell.font = Font(name='Calibri', size=11, bold=row_idx == 1)
            text = "" if cell.value is None else str(cell.value)
            widths[col_idx] = max(widths.get(col_idx, 0), len(text))

    for col_idx, width in widths.items():
        worksheet.column_dimensions[get_column_letter(col_idx)].width = \
            min(max(width + 2, MIN_COLUMN_WIDTH), MAX_COLUMN_WIDTH)
    worksheet.freeze_panes = "A2"
    workbook.save(target)
    workbook.close()


def write_frame_xlsx(path: Union[str, Path], frame: pd.DataFrame, sheet_name: str = "summary") -> Path:
    """Таблица Excel: жирный заголовок, тонкие границы, ширина по содержимому"""
    path = Path(path)

    def write(temp: Path):
        try:
            _save_with_openpyxl_formatting(frame, temp, sheet_name)
        except (ValueError, TypeError) as e:
            logger.warning(f"Форматирование недоступно ({e}), сохраняем без форматирования")
            with pd.ExcelWriter(temp, engine="openpyxl") as writer:
                frame.to_excel(writer, sheet_name=sheet_name, index=False)

    _replace_atomic(path, write)
    logger.info(f"Сохранена таблица Excel: {path}")
    return path
