#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Повороты: непрерывное 6D представление, углы Эйлера и выбор ветви
решения по анатомическим пределам сустава.

Все углы Эйлера в градусах, композиция внутренняя (intrinsic):
R = R_a(alpha) @ R_b(beta) @ R_c(gamma) для порядка "abc".
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from bodyfit.errors import InvalidRotationError

EULER_ORDERS = ("xyz", "xzy", "yxz", "yzx", "zxy", "zyx")
IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

DEGENERATE_NORM = 1e-8
ROTATION_TOLERANCE = 1e-6
GIMBAL_TOLERANCE_DEG = 1e-6

# Номер ветви: 0 - основное решение, 1 - альтернативное, 2 - складывание рамок
BRANCH_PRIMARY = 0
BRANCH_ALTERNATE = 1
BRANCH_GIMBAL = 2

_AXIS = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class EulerTriple:
    """
    Тройка углов Эйлера

    Attributes:
        angles: (alpha, beta, gamma) в градусах, каждый в (-180, 180]
        order: порядок осей, например "xyz"
        octant: выбранная ветвь решения (0, 1 или 2 для gimbal lock)
    """
    angles: Tuple[float, float, float]
    order: str = "xyz"
    octant: int = BRANCH_PRIMARY

    def __post_init__(self):
        check_order(self.order)
        if len(self.angles) != 3 or not np.all(np.isfinite(self.angles)):
            raise InvalidRotationError(f"Ожидалось три конечных угла, получено: {self.angles}")


def check_order(order: str) -> str:
    if order not in EULER_ORDERS:
        raise InvalidRotationError(f"Неизвестный порядок осей Эйлера: {order!r}")
    return order


def wrap_degrees(angles):
    """Приводит углы к интервалу (-180, 180]"""
    angles = np.asarray(angles, dtype=float)
    return angles - 360.0 * np.ceil((angles - 180.0) / 360.0)


def rot6d_to_matrix(r) -> np.ndarray:
    """
    Переводит 6D представление в матрицу поворота (Грам-Шмидт по двум столбцам,
    третий столбец - векторное произведение).

    Args:
        r: массив формы (6,) или (..., 6)

    Returns:
        np.ndarray: матрицы формы (3, 3) или (..., 3, 3)
    """
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 6:
        raise InvalidRotationError(f"6D представление должно иметь 6 компонент, форма: {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidRotationError("6D представление содержит нечисловые значения")

    a1 = r[..., 0:3]
    a2 = r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    n2 = np.linalg.norm(a2, axis=-1)
    if np.any(n1 <= DEGENERATE_NORM) or np.any(n2 <= DEGENERATE_NORM):
        raise InvalidRotationError("Столбец 6D представления имеет нулевую длину")

    b1 = a1 / n1[..., None]
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    nu2 = np.linalg.norm(u2, axis=-1)
    if np.any(nu2 <= DEGENERATE_NORM * n2):
        raise InvalidRotationError("Столбцы 6D представления параллельны")
    b2 = u2 / nu2[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def _skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def rot6d_jacobian(r) -> np.ndarray:
    """
    Производная матрицы поворота по 6D представлению.

    Args:
        r: массив формы (N, 6)

    Returns:
        np.ndarray: (N, 6, 3, 3), элемент [n, k] = dR_n / dr_nk
    """
    r = np.asarray(r, dtype=float).reshape(-1, 6)
    matrices = rot6d_to_matrix(r)
    b1, b2 = matrices[..., 0], matrices[..., 1]
    a2 = r[:, 3:6]
    eye = np.eye(3)

    n1 = np.linalg.norm(r[:, 0:3], axis=-1)
    db1_a1 = (eye - np.einsum('ni,nj->nij', b1, b1)) / n1[:, None, None]
    proj = np.sum(b1 * a2, axis=-1)
    u2 = a2 - proj[:, None] * b1
    du2_a1 = -np.einsum('ni,nm->nim', b1, np.einsum('nl,nlm->nm', a2, db1_a1)) - proj[:, None, None] * db1_a1
    du2_a2 = eye - np.einsum('ni,nj->nij', b1, b1)
    db2_du2 = (eye - np.einsum('ni,nj->nij', b2, b2)) / np.linalg.norm(u2, axis=-1)[:, None, None]

    db1 = np.concatenate([db1_a1, np.zeros_like(db1_a1)], axis=-1)
    db2 = db2_du2 @ np.concatenate([du2_a1, du2_a2], axis=-1)
    db3 = _skew(b1) @ db2 - _skew(b2) @ db1
    # (N, столбец, строка, k) -> (N, k, строка, столбец)
    return np.transpose(np.stack([db1, db2, db3], axis=1), (0, 3, 2, 1))


def matrix_to_rot6d(matrix) -> np.ndarray:
    """Первые два столбца матрицы как 6D представление"""
    matrix = np.asarray(matrix, dtype=float)
    return np.concatenate([matrix[..., :, 0], matrix[..., :, 1]], axis=-1)


def check_rotation(matrix, tolerance: float = ROTATION_TOLERANCE) -> np.ndarray:
    """Проверяет, что матрица является собственным поворотом"""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[-2:] != (3, 3) or not np.all(np.isfinite(matrix)):
        raise InvalidRotationError(f"Ожидалась конечная матрица 3x3, форма: {matrix.shape}")
    gram = np.swapaxes(matrix, -1, -2) @ matrix
    if np.max(np.abs(gram - np.eye(3))) > tolerance:
        raise InvalidRotationError("Матрица не ортонормирована")
    if np.max(np.abs(np.linalg.det(matrix) - 1.0)) > tolerance:
        raise InvalidRotationError("Определитель матрицы не равен 1")
    return matrix


def axis_rotation(axis: int, angle_deg) -> np.ndarray:
    """Матрица(ы) поворота вокруг координатной оси"""
    angle = np.radians(np.asarray(angle_deg, dtype=float))
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    i, j = (axis + 1) % 3, (axis + 2) % 3
    out[..., axis, axis] = 1.0
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., j, i] = s
    out[..., i, j] = -s
    return out


def euler_to_matrix(e: EulerTriple) -> np.ndarray:
    """Внутренняя композиция поворотов в порядке e.order"""
    return Rotation.from_euler(e.order.upper(), e.angles, degrees=True).as_matrix()


def angles_to_matrix(angles, order: str) -> np.ndarray:
    """То же, что euler_to_matrix, но для массива углов формы (..., 3)"""
    check_order(order)
    return Rotation.from_euler(order.upper(), np.asarray(angles, dtype=float).reshape(-1, 3),
                               degrees=True).as_matrix().reshape(np.shape(angles)[:-1] + (3, 3))


def _parity(order: str) -> float:
    i, j = _AXIS[order[0]], _AXIS[order[1]]
    return 1.0 if (j - i) % 3 == 1 else -1.0


def _primary_angles(matrices: np.ndarray, order: str) -> np.ndarray:
    """Основная ветвь (средний угол в [-90, 90]) для массива матриц (N, 3, 3)"""
    i, j, k = (_AXIS[a] for a in order)
    e = _parity(order)
    m = matrices
    cos_b = np.hypot(m[:, i, i], m[:, i, j])
    a = np.arctan2(-e * m[:, j, k], m[:, k, k])
    b = np.arctan2(e * m[:, i, k], cos_b)
    c = np.arctan2(-e * m[:, i, j], m[:, i, i])
    return np.degrees(np.stack([a, b, c], axis=-1))


def _alternate_angles(angles: np.ndarray) -> np.ndarray:
    a, b, c = angles[..., 0], angles[..., 1], angles[..., 2]
    return wrap_degrees(np.stack([a + 180.0, 180.0 - b, c + 180.0], axis=-1))


def limit_violation(angles, box) -> np.ndarray:
    """Сумма выходов углов за пределы [min, max] по трем осям"""
    angles = np.asarray(angles, dtype=float)
    box = np.asarray(box, dtype=float)
    lower, upper = box[..., 0], box[..., 1]
    return np.sum(np.maximum(np.maximum(angles - upper, lower - angles), 0.0), axis=-1)


def _gimbal_angles(matrix: np.ndarray, order: str, middle: float, box: Optional[np.ndarray]) -> np.ndarray:
    """Складывание рамок: третий угол - центр предела, первый решается из остатка"""
    i, j, k = (_AXIS[a] for a in order)
    gamma = 0.0 if box is None else 0.5 * (box[2, 0] + box[2, 1])
    rest = matrix @ (axis_rotation(j, middle) @ axis_rotation(k, gamma)).T
    p, q = (i + 1) % 3, (i + 2) % 3
    alpha = np.degrees(np.arctan2(rest[q, p], rest[p, p]))
    return wrap_degrees(np.array([alpha, middle, gamma]))


def matrices_to_euler(matrices, orders: Sequence[str], boxes=None, check: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Пакетное восстановление углов Эйлера с выбором ветви по пределам.

    Args:
        matrices: (N, 3, 3) матрицы поворота
        orders: N порядков осей
        boxes: (N, 3, 2) пределы [min, max] в градусах или None
        check: проверять ли матрицы на ортонормированность

    Returns:
        (углы (N, 3), номера ветвей (N,))
    """
    matrices = np.asarray(matrices, dtype=float).reshape(-1, 3, 3)
    if check:
        check_rotation(matrices)
    count = matrices.shape[0]
    if len(orders) != count:
        raise InvalidRotationError(f"Число порядков ({len(orders)}) не совпадает с числом матриц ({count})")
    if boxes is not None:
        boxes = np.asarray(boxes, dtype=float).reshape(count, 3, 2)

    angles = np.zeros((count, 3))
    branches = np.zeros(count, dtype=int)
    orders = list(orders)
    for order in sorted(set(orders)):
        check_order(order)
        idx = np.array([n for n, o in enumerate(orders) if o == order])
        primary = _primary_angles(matrices[idx], order)
        alternate = _alternate_angles(primary)
        if boxes is None:
            chosen = primary
            branch = np.zeros(len(idx), dtype=int)
        else:
            v_primary = limit_violation(primary, boxes[idx])
            v_alternate = limit_violation(alternate, boxes[idx])
            use_alt = v_alternate < v_primary
            chosen = np.where(use_alt[:, None], alternate, primary)
            branch = use_alt.astype(int)
        angles[idx] = chosen
        branches[idx] = branch

        gimbal = np.abs(np.abs(primary[:, 1]) - 90.0) < GIMBAL_TOLERANCE_DEG
        for n in np.flatnonzero(gimbal):
            row = idx[n]
            middle = 90.0 if primary[n, 1] > 0 else -90.0
            box = None if boxes is None else boxes[row]
            angles[row] = _gimbal_angles(matrices[row], order, middle, box)
            branches[row] = BRANCH_GIMBAL

    return wrap_degrees(angles), branches


def matrix_to_euler(matrix, order: str, limits=None) -> EulerTriple:
    """
    Восстанавливает углы Эйлера одной матрицы.

    Из двух решений выбирается лежащее внутри пределов сустава,
    иначе - с наименьшим суммарным нарушением (при равенстве - основное).

    Args:
        matrix: матрица поворота 3x3
        order: порядок осей
        limits: пределы сустава формы (3, 2) в градусах или None

    Returns:
        EulerTriple
    """
    check_order(order)
    boxes = None if limits is None else np.asarray(limits, dtype=float).reshape(1, 3, 2)
    angles, branches = matrices_to_euler(np.asarray(matrix, dtype=float)[None], [order], boxes)
    return EulerTriple(tuple(float(a) for a in angles[0]), order, int(branches[0]))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Случайный поворот через ось и угол"""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    return Rotation.from_rotvec(axis * angle).as_matrix()
