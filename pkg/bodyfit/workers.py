#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Пул процессов для пакетной обработки образцов"""

import logging
import multiprocessing
import os
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np
from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(jobs: Optional[int] = None) -> int:
    """Число процессов: по умолчанию - число логических ядер"""
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return int(jobs)


def sample_seed(seed: int, index: int) -> int:
    """Зерно образца, зависящее только от (seed, номер)"""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


def parallel_map(func: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = 1,
                 progress: bool = False, desc: str = "") -> List[R]:
    """
    Упорядоченный map по образцам; при jobs == 1 - в текущем процессе.
    Порядок результатов совпадает с порядком входов при любом jobs.
    """
    items = list(items)
    jobs = min(resolve_jobs(jobs), max(len(items), 1))
    if jobs == 1:
        return list(tqdm(map(func, items), total=len(items), desc=desc, disable=not progress))
    logger.info(f"Запуск пула из {jobs} процессов для {len(items)} образцов")
    with multiprocessing.Pool(jobs) as pool:
        return list(tqdm(pool.imap(func, items), total=len(items), desc=desc, disable=not progress))
