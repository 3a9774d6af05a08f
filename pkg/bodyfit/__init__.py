#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
bodyfit - восстановление 3D позы, формы тела и камеры по 2D ключевым точкам
с оценкой алеаторной и эпистемической неопределенности.
"""

__version__ = "1.0.0"
