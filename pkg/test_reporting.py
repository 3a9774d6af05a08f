#!/usr/bin/env python3
"""
Тесты записи результатов: атомарная запись, CSV и Excel
"""

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook

from bodyfit.reporting import frame_to_csv, write_frame_csv, write_frame_xlsx, write_json_atomic, write_text_atomic


def sample_frame():
    return pd.DataFrame({"sample": ["a", "b"], "value": [1.23456, np.nan], "flag": [True, False]})


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    write_text_atomic(target, "первая\n")
    write_text_atomic(target, "вторая\n")
    assert target.read_text(encoding="utf-8") == "вторая\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_failed_write_keeps_old_content(tmp_path):
    target = tmp_path / "out.json"
    write_json_atomic(target, {"b": 1, "a": [1, 2]})
    with pytest.raises(TypeError):
        write_json_atomic(target, {"bad": object()})
    assert target.read_text(encoding="utf-8") == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'
    assert len(list(tmp_path.iterdir())) == 1


def test_csv_uses_unix_newlines(tmp_path):
    text = frame_to_csv(sample_frame())
    assert text == "sample,value,flag\na,1.23456,True\nb,,False\n"
    path = write_frame_csv(tmp_path / "t.csv", sample_frame())
    assert path.read_bytes() == text.encode("utf-8")


def test_xlsx_formatting(tmp_path):
    path = write_frame_xlsx(tmp_path / "t.xlsx", sample_frame(), "refine")
    sheet = load_workbook(path)["refine"]
    assert [c.value for c in sheet[1]] == ["sample", "value", "flag"]
    assert sheet["A1"].font.bold
    assert sheet["B2"].number_format == "0.000"
    assert sheet["B3"].value is None
    assert sheet["C2"].value == 1
    assert sheet.freeze_panes == "A2"
    assert 8 <= sheet.column_dimensions["A"].width <= 40
