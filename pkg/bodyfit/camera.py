#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Камера: слабая перспектива для подгонки и решатель глубины трех
коллинеарных точек при полной перспективе.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from bodyfit.errors import InvalidCameraError, InvalidInputError, NoSolutionError
from bodyfit.rotations import IDENTITY_6D, rot6d_to_matrix

logger = logging.getLogger(__name__)

DEPTH_TOLERANCE = 1e-8
DISTINCT_POINTS_PX = 1e-9


@dataclass(frozen=True)
class CameraParams:
    """
    Параметры слабой перспективы C = [s, R, t]

    Attributes:
        s: масштаб, пикселей на метр
        rotation: поворот в 6D представлении
        t: сдвиг на изображении, пиксели
    """
    s: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_6D.copy())
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=float)
        t = np.array(self.t, dtype=float)
        if rotation.shape != (6,) or t.shape != (2,):
            raise InvalidCameraError("Поворот камеры должен иметь 6 компонент, сдвиг - 2")
        if not np.isfinite(self.s) or self.s <= 0:
            raise InvalidCameraError(f"Масштаб камеры должен быть положителен, получено {self.s}")
        if not np.all(np.isfinite(t)):
            raise InvalidCameraError("Сдвиг камеры содержит нечисловые значения")
        rot6d_to_matrix(rotation)
        rotation.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, 's', float(self.s))
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 't', t)

    @property
    def matrix(self) -> np.ndarray:
        return rot6d_to_matrix(self.rotation)

    def to_dict(self) -> dict:
        return {"s": self.s, "rotation": self.rotation.tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class Intrinsics:
    """Матрица внутренних параметров K (верхнетреугольная, fx, fy > 0)"""
    K: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != (3, 3) or not np.all(np.isfinite(K)):
            raise InvalidCameraError("K должна быть конечной матрицей 3x3")
        if np.any(np.tril(K, -1) != 0):
            raise InvalidCameraError("K должна быть верхнетреугольной")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or abs(K[2, 2]) < 1e-12:
            raise InvalidCameraError("K: fx, fy должны быть положительны, K[2,2] ненулевым")
        K.setflags(write=False)
        object.__setattr__(self, 'K', K)

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.K)


def project_weak_perspective(points, camera: CameraParams) -> np.ndarray:
    """p_j = s * [R @ P_j]_xy + t"""
    points = np.asarray(points, dtype=float)
    if camera.s <= 0:
        raise InvalidCameraError(f"Масштаб камеры должен быть положителен, получено {camera.s}")
    rotated = points @ camera.matrix.T
    return camera.s * rotated[..., :2] + camera.t


def project_perspective(points, intrinsics: Intrinsics) -> np.ndarray:
    """lambda * p = K @ P"""
    homogeneous = np.asarray(points, dtype=float) @ intrinsics.K.T
    if np.any(np.abs(homogeneous[..., 2]) < 1e-12):
        raise InvalidInputError("Точка лежит в плоскости центра камеры")
    return homogeneous[..., :2] / homogeneous[..., 2:3]


def _collinear_residuals(depths, rays, d12, d13):
    points = depths[:, None] * rays
    v12 = points[1] - points[0]
    v13 = points[2] - points[0]
    n12 = max(np.linalg.norm(v12), 1e-15)
    n13 = max(np.linalg.norm(v13), 1e-15)
    return np.concatenate([v12 / n12 - v13 / n13, [n12 - d12, n13 - d13]])


def solve_collinear_depth(points_2d, intrinsics: Intrinsics, d12: float, d13: float) -> np.ndarray:
    """
    Восстанавливает 3D точки P1, P2, P3 на одной прямой по их проекциям
    и известным расстояниям |P1P2| = d12, |P1P3| = d13.

    Глубины lambda_i ищутся методом Левенберга-Марквардта из lambda = 1;
    из пары зеркальных решений возвращается решение с положительными глубинами.

    Returns:
        np.ndarray: (3, 3) точки в метрах

    Raises:
        NoSolutionError: точки совпадают или данные несовместны
    """
    points_2d = np.asarray(points_2d, dtype=float)
    if points_2d.shape != (3, 2) or not np.all(np.isfinite(points_2d)):
        raise InvalidInputError(f"Ожидалось три конечные 2D точки, форма: {points_2d.shape}")
    if not (np.isfinite(d12) and np.isfinite(d13)) or d12 <= 0 or d13 <= 0:
        raise InvalidInputError(f"Расстояния должны быть положительны: d12={d12}, d13={d13}")
    for a, b in ((0, 1), (0, 2), (1, 2)):
        if np.linalg.norm(points_2d[a] - points_2d[b]) <= DISTINCT_POINTS_PX:
            raise NoSolutionError(f"Точки {a + 1} и {b + 1} совпадают, глубина неопределима")

    homogeneous = np.hstack([points_2d, np.ones((3, 1))])
    rays = homogeneous @ intrinsics.inverse.T
    rays = rays / rays[:, 2:3]

    depths, residual = _solve_depths(np.ones(3), rays, float(d12), float(d13))
    if np.any(depths <= 0) or np.max(np.abs(residual)) > DEPTH_TOLERANCE:
        logger.debug("Старт из lambda = 1 не сошелся, повтор из линейной оценки")
        start = _linear_depth_guess(rays, float(d12), float(d13))
        depths, residual = _solve_depths(start, rays, float(d12), float(d13))
    logger.debug(f"Решатель глубины: глубины {depths}, невязка {np.max(np.abs(residual)):.3e}")
    if np.any(depths <= 0) or np.max(np.abs(residual)) > DEPTH_TOLERANCE:
        raise NoSolutionError(
            f"Нет решения с положительными глубинами (невязка {np.max(np.abs(residual)):.3e})")
    return depths[:, None] * rays


def _solve_depths(start, rays, d12, d13):
    solution = least_squares(_collinear_residuals, start, args=(rays, d12, d13),
                             method='lm', xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    depths = solution.x
    if np.all(depths < 0):
        depths = -depths
    return depths, _collinear_residuals(depths, rays, d12, d13)


def _linear_depth_guess(rays, d12, d13):
    """P2 = (1 - k) P1 + k P3, k = d12 / d13: нуль-пространство системы 3x3"""
    k = d12 / d13
    system = np.stack([(1.0 - k) * rays[0], -rays[1], k * rays[2]], axis=1)
    _, _, vt = np.linalg.svd(system)
    direction = vt[-1]
    span = np.linalg.norm(direction[2] * rays[2] - direction[0] * rays[0])
    if span < 1e-15:
        return np.ones(3)
    return direction * d13 / span
