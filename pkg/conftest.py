#!/usr/bin/env python3
"""Общие фикстуры тестов"""

import pytest

from bodyfit.io_config import load_assets


@pytest.fixture(scope="session")
def assets():
    """Ресурсы модели из данных пакета"""
    return load_assets()
