#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Иерархия исключений пакета bodyfit.

Все пользовательские ошибки наследуются от BodyFitError и ValueError,
поэтому код, ожидающий ValueError для неверного ввода, продолжает работать.
"""

from typing import List, Tuple


class BodyFitError(ValueError):
    """Базовая ошибка пакета"""


class InvalidInputError(BodyFitError):
    """Нечисловые или неверной формы входные данные"""


class InvalidRotationError(BodyFitError):
    """Вырожденное 6D представление или матрица, не являющаяся поворотом"""


class InvalidCameraError(BodyFitError):
    """Недопустимые параметры камеры (s <= 0, вырожденная K)"""


class ConfigError(BodyFitError):
    """Противоречивая конфигурация или данные модели"""


class NoSolutionError(BodyFitError):
    """Система уравнений не имеет допустимого решения"""


class NoDataError(BodyFitError):
    """Нет ни одной видимой ключевой точки"""


class UnderConstrainedError(BodyFitError):
    """Слишком мало наблюдений для подгонки"""


class InvalidArgumentError(BodyFitError):
    """Недопустимое значение аргумента операции"""


class AssetValidationError(BodyFitError):
    """
    Файл данных не прошел проверку схемы.

    Attributes:
        issues: список пар (json-pointer, сообщение)
    """

    def __init__(self, source: str, issues: List[Tuple[str, str]]):
        self.source = source
        self.issues = list(issues)
        details = "; ".join(f"{pointer or '/'}: {message}" for pointer, message in self.issues)
        super().__init__(f"Файл {source} не прошел проверку: {details}")
