#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Общие ограничения тела: антропометрия, регуляризация формы, геометрия торса,
биомеханические пределы углов с межсуставными зависимостями, и их взвешенная сумма.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from bodyfit.body_model import (BodyModel, BodyPose, BodyShape, BodySurface, FKResult, GEOMETRY_ROLES,
                                KinematicJacobian, KinematicTree, ShapeBasis, bone_lengths, bone_segments,
                                capsule_radii, forward_kinematics)
from bodyfit.collision import detect_collisions, physics_loss, physics_loss_from_fk, physics_segment_gradient
from bodyfit.errors import ConfigError, InvalidInputError
from bodyfit.rotations import angles_to_matrix, matrices_to_euler, matrix_to_rot6d, rot6d_to_matrix

logger = logging.getLogger(__name__)

ANTHROPOMETRY_ENTRIES = 20
AXIS_COUNT = 3


@dataclass(frozen=True)
class AnthropometryEntry:
    """Кость или цепочка костей с целевой долей роста"""
    name: str
    bones: Tuple[int, ...]
    ratio: float
    weight: float = 1.0


@dataclass(frozen=True)
class AnthropometryTable:
    """Ровно 20 антропометрических пропорций и опорный рост (метры)"""
    entries: Tuple[AnthropometryEntry, ...]
    reference_height: float = 1.70

    def __post_init__(self):
        object.__setattr__(self, 'entries', tuple(self.entries))
        if len(self.entries) != ANTHROPOMETRY_ENTRIES:
            raise ConfigError(f"Требуется ровно {ANTHROPOMETRY_ENTRIES} записей, получено {len(self.entries)}")
        if not self.reference_height > 0:
            raise ConfigError("Опорный рост должен быть положителен")
        for entry in self.entries:
            if not 0.0 < entry.ratio < 1.0:
                raise ConfigError(f"{entry.name}: доля роста должна быть в (0, 1), получено {entry.ratio}")
            if entry.weight < 0 or not entry.bones:
                raise ConfigError(f"{entry.name}: пустая цепочка или отрицательный вес")

    def targets(self) -> np.ndarray:
        return np.array([e.ratio for e in self.entries]) * self.reference_height

    def check_bones(self, bone_count: int) -> None:
        for entry in self.entries:
            if any(not 0 <= b < bone_count for b in entry.bones):
                raise ConfigError(f"{entry.name}: ссылка на несуществующую кость")

    @classmethod
    def from_lengths(cls, names: Sequence[str], chains: Sequence[Sequence[int]], lengths, height: float):
        """Таблица, точно согласованная с заданными длинами"""
        lengths = np.asarray(lengths, dtype=float)
        entries = [AnthropometryEntry(name, tuple(chain), float(lengths[list(chain)].sum() / height))
                   for name, chain in zip(names, chains)]
        return cls(tuple(entries), height)


@dataclass(frozen=True)
class AngleLimits:
    """
    Пределы углов Эйлера: 23 сустава x 3 оси, градусы

    Attributes:
        lower, upper: (23, 3)
        joint_names: имена суставов позы (без корня)
    """
    lower: np.ndarray
    upper: np.ndarray
    joint_names: Tuple[str, ...] = ()

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 2 or lower.shape[1] != AXIS_COUNT:
            raise ConfigError(f"Пределы должны иметь форму (N, 3), получено {lower.shape} и {upper.shape}")
        if np.any(lower > upper):
            j, a = np.argwhere(lower > upper)[0]
            raise ConfigError(f"Сустав {j}, ось {a}: min больше max")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)
        object.__setattr__(self, 'joint_names', tuple(self.joint_names))

    @property
    def boxes(self) -> np.ndarray:
        """(23, 3, 2) пределы [min, max]"""
        return np.stack([self.lower, self.upper], axis=-1)

    @property
    def joint_count(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class DependencyRule:
    """
    Правило межсуставной зависимости: граница цели сдвигается на alpha0 * угол источника.

    Индексы суставов - индексы позы (0..22), оси - позиции в порядке Эйлера сустава.
    """
    source_joint: int
    source_axis: int
    target_joint: int
    target_axis: int
    bound: str
    alpha0: float
    use_magnitude: bool = False
    name: str = ""

    def __post_init__(self):
        if self.bound not in ("min", "max"):
            raise ConfigError(f"Граница должна быть 'min' или 'max', получено {self.bound!r}")
        if not np.isfinite(self.alpha0):
            raise ConfigError("alpha0 должен быть конечным")
        if (self.source_joint, self.source_axis) == (self.target_joint, self.target_axis):
            raise ConfigError(f"Правило {self.name}: источник совпадает с целью")
        if not (0 <= self.source_axis < AXIS_COUNT and 0 <= self.target_axis < AXIS_COUNT):
            raise ConfigError(f"Правило {self.name}: номер оси вне 0..2")


@dataclass(frozen=True)
class GenericWeights:
    """Веса общей функции потерь"""
    anatomy: float = 500.0
    biomechanics: float = 1000.0
    physics: float = 1000.0
    beta: float = 0.001
    geometry: float = 1.0
    collinear: float = 1.0

    def __post_init__(self):
        for name in ("anatomy", "biomechanics", "physics", "beta", "geometry", "collinear"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"Вес {name} должен быть неотрицательным, получено {value}")


@dataclass(frozen=True)
class ModelAssets:
    """Модель тела вместе с таблицами ограничений"""
    model: BodyModel
    limits: AngleLimits
    rules: Tuple[DependencyRule, ...]
    anthropometry: AnthropometryTable
    hashes: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'rules', tuple(self.rules))
        pose_joints = self.model.tree.pose_joint_count
        if self.limits.joint_count != pose_joints:
            raise ConfigError(f"Пределы заданы для {self.limits.joint_count} суставов, ожидалось {pose_joints}")
        self.anthropometry.check_bones(self.model.tree.bone_count)
        for rule in self.rules:
            if not (0 <= rule.source_joint < pose_joints and 0 <= rule.target_joint < pose_joints):
                raise ConfigError(f"Правило {rule.name}: сустав вне скелета")

    @property
    def tree(self) -> KinematicTree:
        return self.model.tree

    @property
    def basis(self) -> ShapeBasis:
        return self.model.basis


def anthropometry_loss(shape: BodyShape, table: AnthropometryTable, basis: ShapeBasis) -> float:
    """1/20 * sum w_i ((L^_i - L_i) / L_i)^2"""
    table.check_bones(len(basis.base_lengths))
    lengths = bone_lengths(shape, basis).lengths
    return _anthropometry_from_lengths(lengths, table)


def _anthropometry_from_lengths(lengths: np.ndarray, table: AnthropometryTable) -> float:
    predicted = np.array([lengths[list(e.bones)].sum() for e in table.entries])
    targets = table.targets()
    weights = np.array([e.weight for e in table.entries])
    relative = (predicted - targets) / targets
    return float(np.mean(weights * relative ** 2))


def anthropometry_length_gradient(lengths: np.ndarray, table: AnthropometryTable) -> np.ndarray:
    """Производная антропометрической потери по длинам костей (B,)"""
    predicted = np.array([lengths[list(e.bones)].sum() for e in table.entries])
    targets = table.targets()
    weights = np.array([e.weight for e in table.entries])
    per_entry = 2.0 * weights * (predicted - targets) / targets ** 2 / len(table.entries)
    out = np.zeros(len(lengths))
    for entry, value in zip(table.entries, per_entry):
        np.add.at(out, list(entry.bones), value)
    return out


def beta_regularization(shape: BodyShape) -> float:
    """||beta||^2"""
    return float(np.sum(np.asarray(shape.beta) ** 2))


@dataclass(frozen=True)
class GeometryLoss:
    """Слагаемые геометрии торса"""
    coplanar: float
    collinear: float
    value: float
    degenerate: bool = False


def _role_points(joints, roles) -> np.ndarray:
    joints = np.asarray(joints, dtype=float)
    try:
        return np.stack([joints[roles[name]] for name in GEOMETRY_ROLES])
    except KeyError as e:
        raise ConfigError(f"Не задана роль геометрии: {e}") from None


def geometry_loss(joints, roles, collinear_weight: float = 1.0) -> GeometryLoss:
    """
    L_coplanar + lambda * L_collinear

    L_coplanar = |(P01 x P03) . P02| / (|P01 x P03| |P02|),
    L_collinear = |P64 x P65| / (|P64| |P65|).
    Вырожденные векторы дают нулевое слагаемое и флаг degenerate.
    """
    coplanar, collinear, degenerate = _geometry_terms(_role_points(joints, roles))
    coplanar, collinear = float(coplanar), float(collinear)
    return GeometryLoss(coplanar, collinear, coplanar + collinear_weight * collinear, bool(degenerate))


def _geometry_terms(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Слагаемые геометрии для точек ролей формы (..., 7, 3)"""
    eps = 1e-12
    normal = np.cross(p[..., 1, :] - p[..., 0, :], p[..., 3, :] - p[..., 0, :])
    spine_neck = p[..., 2, :] - p[..., 0, :]
    denom = np.linalg.norm(normal, axis=-1) * np.linalg.norm(spine_neck, axis=-1)
    flat = denom <= eps
    coplanar = np.where(flat, 0.0, np.abs(np.sum(normal * spine_neck, axis=-1)) / np.where(flat, 1.0, denom))

    left = p[..., 4, :] - p[..., 6, :]
    right = p[..., 5, :] - p[..., 6, :]
    denom = np.linalg.norm(left, axis=-1) * np.linalg.norm(right, axis=-1)
    short = denom <= eps
    collinear = np.where(short, 0.0, np.linalg.norm(np.cross(left, right), axis=-1) / np.where(short, 1.0, denom))
    return np.minimum(coplanar, 1.0), np.minimum(collinear, 1.0), flat | short


def geometry_gradient(joints, roles, collinear_weight: float = 1.0, step: float = 1e-6) -> np.ndarray:
    """
    Градиент значения геометрии по позициям суставов (J, 3):
    центральные разности по 21 координате точек ролей одним пакетом
    """
    joints = np.asarray(joints, dtype=float)
    p = _role_points(joints, roles)
    shifts = step * np.eye(p.size).reshape(-1, *p.shape)
    batch = np.concatenate([p + shifts, p - shifts])
    coplanar, collinear, _ = _geometry_terms(batch)
    values = coplanar + collinear_weight * collinear
    half = len(shifts)
    grad = ((values[:half] - values[half:]) / (2.0 * step)).reshape(p.shape)
    out = np.zeros_like(joints)
    np.add.at(out, [roles[name] for name in GEOMETRY_ROLES], grad)
    return out


def geometry_angles(joints, roles) -> Tuple[float, float]:
    """
    Углы для аудита, градусы: (угол между позвоночник-шея и нормалью плечевой плоскости,
    идеал 90; угол между костями таз-бедро, идеал 180)
    """
    p = _role_points(joints, roles)
    normal = np.cross(p[1] - p[0], p[3] - p[0])
    spine_neck = p[2] - p[0]
    denom = np.linalg.norm(normal) * np.linalg.norm(spine_neck)
    coplanar = 90.0 if denom < 1e-12 else float(np.degrees(np.arccos(np.clip(abs(normal @ spine_neck) / denom, 0.0, 1.0))))
    left = p[4] - p[6]
    right = p[5] - p[6]
    denom = np.linalg.norm(left) * np.linalg.norm(right)
    collinear = 180.0 if denom < 1e-12 else float(np.degrees(np.arccos(np.clip(left @ right / denom, -1.0, 1.0))))
    return coplanar, collinear


def pose_euler_angles(local_rotations, tree: KinematicTree, limits: AngleLimits) -> np.ndarray:
    """
    Углы Эйлера всех суставов позы (23, 3); ветвь выбирается по статическим пределам

    Args:
        local_rotations: (23, 3, 3) локальные повороты суставов 1..23
    """
    orders = tree.rotation_order[1:]
    angles, _ = matrices_to_euler(local_rotations, orders, limits.boxes, check=False)
    return angles


def update_dependent_bounds(angles, limits: AngleLimits, rules: Sequence[DependencyRule]) -> AngleLimits:
    """
    Динамические границы: max <- max - alpha0 * phi, min <- min + alpha0 * phi.
    Правила применяются последовательно; граница, пересекшая противоположную, прижимается к ней.

    Args:
        angles: (23, 3) текущие углы Эйлера, градусы
    """
    angles = np.asarray(angles, dtype=float)
    if angles.shape != limits.lower.shape:
        raise InvalidInputError(f"Форма углов {angles.shape} не совпадает с пределами {limits.lower.shape}")
    lower, upper = _dynamic_bounds(angles[None], limits, rules)
    return AngleLimits(lower[0], upper[0], limits.joint_names)


def _dynamic_bounds(angles: np.ndarray, limits: AngleLimits,
                    rules: Sequence[DependencyRule]) -> Tuple[np.ndarray, np.ndarray]:
    """Динамические границы для пакета углов (N, 23, 3)"""
    count = len(angles)
    lower = np.repeat(np.asarray(limits.lower)[None], count, axis=0)
    upper = np.repeat(np.asarray(limits.upper)[None], count, axis=0)
    for rule in rules:
        phi = angles[:, rule.source_joint, rule.source_axis]
        if rule.use_magnitude:
            phi = np.abs(phi)
        j, a = rule.target_joint, rule.target_axis
        if rule.bound == "max":
            upper[:, j, a] = np.maximum(upper[:, j, a] - rule.alpha0 * phi, lower[:, j, a])
        else:
            lower[:, j, a] = np.minimum(lower[:, j, a] + rule.alpha0 * phi, upper[:, j, a])
    return lower, upper


def biomechanics_loss_batch(angles, limits: AngleLimits, rules: Sequence[DependencyRule]) -> np.ndarray:
    """Биомеханическая потеря с динамическими границами для пакета углов (N, 23, 3)"""
    angles = np.asarray(angles, dtype=float)
    lower, upper = _dynamic_bounds(angles, limits, rules)
    violation = np.maximum(np.maximum(angles - upper, lower - angles), 0.0)
    return np.sum(violation ** 2, axis=(1, 2))


def biomechanics_gradient(theta, tree: KinematicTree, limits: AngleLimits, rules: Sequence[DependencyRule],
                          step: float = 1e-4) -> np.ndarray:
    """
    Градиент биомеханической потери по theta (23, 6).

    Центральные разности по каждой компоненте 6D сустава: меняется одна строка углов,
    все 276 сдвигов восстанавливаются в углы Эйлера и оцениваются одним пакетом.
    """
    theta = np.asarray(theta, dtype=float)
    joints, width = theta.shape
    orders = tree.rotation_order[1:]
    base, _ = matrices_to_euler(rot6d_to_matrix(theta), orders, limits.boxes, check=False)

    shifts = step * np.eye(width)
    rows = np.concatenate([(theta[:, None, :] + shifts).reshape(-1, width),
                           (theta[:, None, :] - shifts).reshape(-1, width)])
    owner = np.tile(np.repeat(np.arange(joints), width), 2)
    shifted, _ = matrices_to_euler(rot6d_to_matrix(rows), [orders[k] for k in owner], limits.boxes[owner],
                                   check=False)
    batch = np.repeat(base[None], len(rows), axis=0)
    batch[np.arange(len(rows)), owner] = shifted
    values = biomechanics_loss_batch(batch, limits, rules)
    half = joints * width
    return ((values[:half] - values[half:]) / (2.0 * step)).reshape(joints, width)


def angle_violations(angles, limits: AngleLimits) -> np.ndarray:
    """max(phi - max, min - phi, 0) для каждого угла, градусы"""
    angles = np.asarray(angles, dtype=float)
    return np.maximum(np.maximum(angles - limits.upper, limits.lower - angles), 0.0)


def biomechanics_loss(angles, limits: AngleLimits) -> float:
    """Сумма квадратов нарушений пределов по 69 углам, градусы^2"""
    return float(np.sum(angle_violations(angles, limits) ** 2))


@dataclass(frozen=True)
class GenericLoss:
    """Взвешенная сумма и отдельные слагаемые"""
    total: float
    terms: Dict[str, float]
    angles: Optional[np.ndarray] = None
    degenerate_geometry: bool = False


def generic_loss(pose: BodyPose, shape: BodyShape, assets: ModelAssets, weights: GenericWeights,
                 fk: Optional[FKResult] = None, surface: Optional[BodySurface] = None) -> GenericLoss:
    """
    lambda1 * анатомия + lambda2 * биомеханика + lambda3 * физика,
    анатомия = антропометрия + lambda_beta * ||beta||^2 + lambda_geom * геометрия

    Args:
        fk: готовый результат прямой кинематики (иначе вычисляется)
        surface: готовая поверхность (иначе физика считается по капсулам с ленивым построением сетки)
    """
    if fk is None:
        fk = forward_kinematics(pose, shape, assets.tree, assets.basis)

    anthropometry = _anthropometry_from_lengths(fk.lengths.lengths, assets.anthropometry)
    beta_reg = beta_regularization(shape)
    geometry = geometry_loss(fk.joints, assets.tree.geometry_roles, weights.collinear)
    anatomy = anthropometry + weights.beta * beta_reg + weights.geometry * geometry.value

    angles = pose_euler_angles(fk.local_rotations[1:], assets.tree, assets.limits)
    dynamic = update_dependent_bounds(angles, assets.limits, assets.rules)
    biomechanics = biomechanics_loss(angles, dynamic)

    if weights.physics == 0:
        physics = 0.0
    elif surface is None:
        physics, _ = physics_loss_from_fk(fk, assets.model)
    else:
        physics = physics_loss(surface, detect_collisions(surface))

    total = weights.anatomy * anatomy + weights.biomechanics * biomechanics + weights.physics * physics
    terms = {
        "anthropometry": anthropometry,
        "beta_regularization": beta_reg,
        "geometry": geometry.value,
        "coplanar": geometry.coplanar,
        "collinear": geometry.collinear,
        "anatomy": anatomy,
        "biomechanics": biomechanics,
        "physics": physics,
        "generic": total,
    }
    return GenericLoss(float(total), terms, angles, geometry.degenerate)


def pose_from_euler(angles, tree: KinematicTree) -> BodyPose:
    """Поза из углов Эйлера (23, 3) в порядках осей суставов"""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (tree.pose_joint_count, AXIS_COUNT):
        raise InvalidInputError(f"Углы должны иметь форму ({tree.pose_joint_count}, 3), получено {angles.shape}")
    matrices = np.stack([angles_to_matrix(a, order) for a, order in zip(angles, tree.rotation_order[1:])])
    return BodyPose(matrix_to_rot6d(matrices))


def generic_gradient(pose: BodyPose, shape: BodyShape, assets: ModelAssets, weights: GenericWeights,
                     fk: FKResult, jacobian: KinematicJacobian,
                     fd_step: float = 1e-4) -> Tuple[np.ndarray, np.ndarray]:
    """
    Градиент generic_loss по theta (23, 6) и beta (10,).

    Антропометрия и регуляризация формы - аналитически; геометрия, биомеханика и физика -
    разностями по своим малым входам (точки ролей, 6D одного сустава, концы капсул),
    затем цепным правилом через якобиан кинематики.
    """
    tree = assets.tree
    model = assets.model
    g_joints = np.zeros_like(fk.joints)
    g_lengths = np.zeros(tree.bone_count)
    g_theta = np.zeros_like(np.asarray(pose.theta, dtype=float))
    g_beta = 2.0 * weights.anatomy * weights.beta * np.asarray(shape.beta, dtype=float)

    if weights.anatomy > 0:
        g_lengths += weights.anatomy * anthropometry_length_gradient(fk.lengths.lengths, assets.anthropometry)
        if weights.geometry > 0:
            g_joints += weights.anatomy * weights.geometry * geometry_gradient(fk.joints, tree.geometry_roles,
                                                                               weights.collinear)
    if weights.biomechanics > 0:
        g_theta += weights.biomechanics * biomechanics_gradient(pose.theta, tree, assets.limits, assets.rules,
                                                                fd_step)
    if weights.physics > 0:
        g_axes, g_radii = physics_segment_gradient(bone_segments(fk, tree), capsule_radii(model, fk.lengths),
                                                   tree.adjacent_bones, model.capsules.resolution)
        np.add.at(g_joints, tree.parent_index[1:], weights.physics * g_axes[:, 0])
        g_joints[1:] += weights.physics * g_axes[:, 1]
        g_lengths += weights.physics * g_radii * model.capsules.radii / model.basis.base_lengths

    pulled_theta, pulled_beta = jacobian.pull(g_joints, g_lengths)
    return g_theta + pulled_theta, g_beta + pulled_beta
