#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Настройка логирования для командной строки"""

import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(log_dir: Optional[Path] = None, verbose: bool = False) -> logging.Logger:
    """
    Настраивает логирование: поток stderr и, при необходимости, файл в папке logs

    Args:
        log_dir: папка для файла bodyfit.log; None - только stderr
        verbose: включить уровень DEBUG

    Returns:
        logging.Logger: корневой логгер пакета
    """
    handlers = [logging.StreamHandler(sys.stderr)]

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / 'bodyfit.log', encoding='utf-8'))

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    return logging.getLogger('bodyfit')
