#!/usr/bin/env python3
"""
Тесты камеры: проекции и восстановление глубины трех коллинеарных точек
"""

import time

import numpy as np
import pytest

from bodyfit.camera import CameraParams, Intrinsics, project_perspective, project_weak_perspective, \
    solve_collinear_depth
from bodyfit.errors import InvalidCameraError, InvalidInputError, NoSolutionError
from bodyfit.rotations import axis_rotation, matrix_to_rot6d

K = np.array([[1000.0, 0.0, 320.0], [0.0, 1000.0, 240.0], [0.0, 0.0, 1.0]])


def test_weak_perspective_identity():
    camera = CameraParams(2.0, matrix_to_rot6d(np.eye(3)), np.array([1.0, 1.0]))
    np.testing.assert_allclose(project_weak_perspective([[1.0, 2.0, 3.0]], camera), [[3.0, 5.0]])


def test_weak_perspective_flips_image_y():
    camera = CameraParams(100.0, matrix_to_rot6d(axis_rotation(0, 180.0)), np.array([256.0, 256.0]))
    np.testing.assert_allclose(project_weak_perspective([0.0, 1.0, 0.0], camera), [256.0, 156.0], atol=1e-9)


def test_invalid_camera_rejected():
    with pytest.raises(InvalidCameraError):
        CameraParams(0.0)
    with pytest.raises(InvalidCameraError):
        CameraParams(1.0, t=np.array([np.inf, 0.0]))
    with pytest.raises(InvalidCameraError):
        Intrinsics(np.array([[1000.0, 0.0, 0.0], [5.0, 1000.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(InvalidCameraError):
        Intrinsics(np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_perspective_projection():
    np.testing.assert_allclose(project_perspective([[0.1, -0.2, 2.0]], Intrinsics(K)), [[370.0, 140.0]])
    with pytest.raises(InvalidInputError):
        project_perspective([[1.0, 1.0, 0.0]], Intrinsics(K))


def collinear_triple(rng):
    p1 = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(2.0, 6.0)])
    angle = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(angle), np.sin(angle), rng.uniform(-0.3, 0.3)])
    direction /= np.linalg.norm(direction)
    d12 = rng.uniform(0.1, 0.5)
    d13 = d12 + rng.uniform(0.1, 0.5)
    return np.stack([p1, p1 + d12 * direction, p1 + d13 * direction]), d12, d13


def test_depth_solver_recovers_forward_projection():
    """Прямая проекция и обратное решение на 100 случайных тройках"""
    rng = np.random.default_rng(21)
    intrinsics = Intrinsics(K)
    start = time.perf_counter()
    for _ in range(100):
        points, d12, d13 = collinear_triple(rng)
        solved = solve_collinear_depth(project_perspective(points, intrinsics), intrinsics, d12, d13)
        np.testing.assert_allclose(solved, points, atol=1e-6)
    assert time.perf_counter() - start < 10.0


def test_depth_solver_rejects_inconsistent_input():
    intrinsics = Intrinsics(K)
    with pytest.raises(NoSolutionError):
        solve_collinear_depth([[300.0, 200.0], [400.0, 200.0], [300.0, 320.0]], intrinsics, 0.2, 0.4)
    with pytest.raises(NoSolutionError):
        solve_collinear_depth([[300.0, 200.0], [300.0, 200.0], [360.0, 260.0]], intrinsics, 0.2, 0.4)
    with pytest.raises(InvalidInputError):
        solve_collinear_depth([[300.0, 200.0], [350.0, 230.0], [400.0, 260.0]], intrinsics, -0.2, 0.4)
