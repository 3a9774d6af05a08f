#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Параметрическая модель тела: скелет из 24 суставов (топология SMPL),
длины костей от параметров формы, прямая кинематика и поверхность из капсул.

Система координат шаблона: x - влево (сторона тела), y - вверх, z - вперед.
Корень (таз) всегда в начале координат с единичным поворотом; глобальная
ориентация тела хранится в повороте камеры.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Mapping, Optional, Sequence, Tuple

import numpy as np

from bodyfit.errors import ConfigError, InvalidInputError
from bodyfit.rotations import EULER_ORDERS, IDENTITY_6D, rot6d_jacobian, rot6d_to_matrix

logger = logging.getLogger(__name__)

ROOT_PARENT = -1
SHAPE_DIM = 10
BETA_LIMIT = 3.0
MIN_BONE_LENGTH = 1e-3

GEOMETRY_ROLES = ("spine", "left_shoulder", "neck", "right_shoulder", "left_hip", "right_hip", "pelvis")


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class KinematicTree:
    """
    Кинематическое дерево скелета

    Attributes:
        parent_index: индекс родителя для каждого сустава (корень = -1)
        rest_offsets: смещения от родителя в шаблонной позе, метры
        joint_names: имена суставов
        rotation_order: порядок осей Эйлера для каждого сустава
        geometry_roles: роль -> индекс сустава для торсовой геометрии
        template_height: рост шаблона, метры
    """
    parent_index: np.ndarray
    rest_offsets: np.ndarray
    joint_names: Tuple[str, ...]
    rotation_order: Tuple[str, ...]
    geometry_roles: Mapping[str, int] = field(default_factory=dict)
    template_height: float = 1.70

    def __post_init__(self):
        parents = _frozen(self.parent_index, dtype=int)
        offsets = _frozen(self.rest_offsets)
        object.__setattr__(self, 'parent_index', parents)
        object.__setattr__(self, 'rest_offsets', offsets)
        object.__setattr__(self, 'joint_names', tuple(self.joint_names))
        object.__setattr__(self, 'rotation_order', tuple(self.rotation_order))
        object.__setattr__(self, 'geometry_roles', dict(self.geometry_roles))

        count = len(parents)
        if offsets.shape != (count, 3) or len(self.joint_names) != count or len(self.rotation_order) != count:
            raise ConfigError("Размеры полей скелета не согласованы")
        if count < 2:
            raise ConfigError("Скелет должен содержать хотя бы один сустав помимо корня")
        if int(np.sum(parents == ROOT_PARENT)) != 1 or parents[0] != ROOT_PARENT:
            raise ConfigError("Скелет должен иметь ровно один корень с индексом 0")
        for j in range(1, count):
            if not 0 <= parents[j] < j:
                raise ConfigError(f"Сустав {self.joint_names[j]}: родитель должен предшествовать потомку")
        lengths = np.linalg.norm(offsets[1:], axis=1)
        if np.any(lengths <= 0):
            bad = self.joint_names[1 + int(np.argmin(lengths))]
            raise ConfigError(f"Кость {bad} имеет нулевую длину в шаблоне")
        if len(set(self.joint_names)) != count:
            raise ConfigError("Имена суставов должны быть уникальны")
        for order in self.rotation_order:
            if order not in EULER_ORDERS:
                raise ConfigError(f"Неизвестный порядок осей: {order}")
        roles = list(self.geometry_roles.values())
        if self.geometry_roles:
            if set(self.geometry_roles) != set(GEOMETRY_ROLES):
                raise ConfigError(f"Роли геометрии должны быть ровно {GEOMETRY_ROLES}")
            if len(set(roles)) != len(roles) or not all(0 <= r < count for r in roles):
                raise ConfigError("Индексы ролей геометрии должны быть различными и допустимыми")

    @property
    def joint_count(self) -> int:
        return len(self.parent_index)

    @property
    def bone_count(self) -> int:
        return self.joint_count - 1

    @property
    def pose_joint_count(self) -> int:
        return self.joint_count - 1

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise ConfigError(f"Неизвестный сустав: {name}") from None

    def bone_joints(self, bone: int) -> Tuple[int, int]:
        """Кость с номером b соединяет родителя сустава b+1 и сам сустав b+1"""
        child = bone + 1
        return int(self.parent_index[child]), child

    @cached_property
    def adjacent_bones(self) -> FrozenSet[Tuple[int, int]]:
        """Пары костей (a < b), имеющие общий сустав"""
        pairs = set()
        joints = [set(self.bone_joints(b)) for b in range(self.bone_count)]
        for a in range(self.bone_count):
            for b in range(a + 1, self.bone_count):
                if joints[a] & joints[b]:
                    pairs.add((a, b))
        return frozenset(pairs)

    @cached_property
    def ancestors(self) -> np.ndarray:
        """(J, J) bool: [k, j] - сустав k строгий предок сустава j"""
        out = np.zeros((self.joint_count, self.joint_count), dtype=bool)
        for j in range(1, self.joint_count):
            p = self.parent_index[j]
            out[:, j] = out[:, p]
            out[p, j] = True
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class BodyShape:
    """Параметры формы beta (10 значений)"""
    beta: np.ndarray = field(default_factory=lambda: np.zeros(SHAPE_DIM))

    def __post_init__(self):
        beta = _frozen(self.beta)
        if beta.shape != (SHAPE_DIM,):
            raise InvalidInputError(f"beta должен иметь форму ({SHAPE_DIM},), получено {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise InvalidInputError("beta содержит нечисловые значения")
        object.__setattr__(self, 'beta', beta)


@dataclass(frozen=True)
class BodyPose:
    """Повороты 23 суставов в 6D представлении"""
    theta: np.ndarray

    def __post_init__(self):
        theta = _frozen(self.theta)
        if theta.ndim != 2 or theta.shape[1] != 6:
            raise InvalidInputError(f"theta должен иметь форму (N, 6), получено {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("theta содержит нечисловые значения")
        object.__setattr__(self, 'theta', theta)

    @classmethod
    def identity(cls, joints: int = 23) -> "BodyPose":
        return cls(np.tile(IDENTITY_6D, (joints, 1)))


@dataclass(frozen=True)
class ShapeBasis:
    """
    Базис формы

    Attributes:
        base_lengths: длины костей шаблона, метры
        basis: матрица (кости x 10), относительное изменение длины на единицу beta
    """
    base_lengths: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        base = _frozen(self.base_lengths)
        basis = _frozen(self.basis)
        if base.ndim != 1 or basis.shape != (len(base), SHAPE_DIM):
            raise ConfigError(f"Базис формы должен иметь форму ({len(base)}, {SHAPE_DIM})")
        if np.any(base <= 0) or not np.all(np.isfinite(basis)):
            raise ConfigError("Длины костей шаблона должны быть положительны, базис - конечен")
        object.__setattr__(self, 'base_lengths', base)
        object.__setattr__(self, 'basis', basis)


@dataclass(frozen=True)
class CapsuleParams:
    """Радиусы капсул по костям (метры, при beta = 0) и число сегментов окружности"""
    radii: np.ndarray
    resolution: int = 8

    def __post_init__(self):
        radii = _frozen(self.radii)
        if np.any(radii <= 0):
            raise ConfigError("Радиусы капсул должны быть положительны")
        if int(self.resolution) < 3:
            raise ConfigError(f"Разрешение капсулы должно быть не меньше 3, получено {self.resolution}")
        object.__setattr__(self, 'radii', radii)
        object.__setattr__(self, 'resolution', int(self.resolution))


@dataclass(frozen=True)
class BodyModel:
    """Скелет, базис формы и капсулы вместе"""
    tree: KinematicTree
    basis: ShapeBasis
    capsules: CapsuleParams

    def __post_init__(self):
        bones = self.tree.bone_count
        if len(self.basis.base_lengths) != bones or len(self.capsules.radii) != bones:
            raise ConfigError(f"Скелет содержит {bones} костей, базис и капсулы должны им соответствовать")


@dataclass(frozen=True)
class BoneLengths:
    """Длины костей и признаки ограничения"""
    lengths: np.ndarray
    clamped: np.ndarray
    beta_clamped: bool = False

    @property
    def warning(self) -> bool:
        return bool(self.beta_clamped or np.any(self.clamped))


@dataclass(frozen=True)
class FKResult:
    """Результат прямой кинематики"""
    joints: np.ndarray
    rotations: np.ndarray
    local_rotations: np.ndarray
    lengths: BoneLengths


def bone_lengths(shape: BodyShape, basis: ShapeBasis) -> BoneLengths:
    """
    L_i = base_i * (1 + sum_k beta_k * basis_ik), beta ограничен [-3, 3], L >= 1 мм
    """
    beta = np.asarray(shape.beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise InvalidInputError("beta содержит нечисловые значения")
    clipped = np.clip(beta, -BETA_LIMIT, BETA_LIMIT)
    beta_clamped = bool(np.any(clipped != beta))
    raw = basis.base_lengths * (1.0 + basis.basis @ clipped)
    clamped = raw < MIN_BONE_LENGTH
    lengths = np.where(clamped, MIN_BONE_LENGTH, raw)
    if beta_clamped or np.any(clamped):
        logger.warning(f"Длины костей ограничены: beta вне [-3, 3] = {beta_clamped}, костей < 1 мм: {int(np.sum(clamped))}")
    return BoneLengths(_frozen(lengths), _frozen(clamped, dtype=bool), beta_clamped)


def forward_kinematics(pose: BodyPose, shape: BodyShape, tree: KinematicTree, basis: ShapeBasis,
                       root_rotation: Optional[np.ndarray] = None) -> FKResult:
    """
    Прямая кинематика: сустав j = родитель + R_мир(родителя) @ (единичное смещение j * L_j)

    Args:
        pose: повороты суставов 1..J-1
        shape: параметры формы
        tree: скелет
        basis: базис формы
        root_rotation: поворот корня (по умолчанию единичный)

    Returns:
        FKResult: позиции (J, 3) в метрах и мировые повороты (J, 3, 3)
    """
    theta = np.asarray(pose.theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("theta содержит нечисловые значения")
    if theta.shape != (tree.pose_joint_count, 6):
        raise InvalidInputError(f"theta должен иметь форму ({tree.pose_joint_count}, 6), получено {theta.shape}")
    if len(basis.base_lengths) != tree.bone_count:
        raise ConfigError("Число костей в базисе не совпадает со скелетом")

    lengths = bone_lengths(shape, basis)
    count = tree.joint_count
    local = np.empty((count, 3, 3))
    local[0] = np.eye(3) if root_rotation is None else np.asarray(root_rotation, dtype=float)
    local[1:] = rot6d_to_matrix(theta)

    offsets = tree.rest_offsets[1:] / np.linalg.norm(tree.rest_offsets[1:], axis=1)[:, None]
    offsets = offsets * lengths.lengths[:, None]

    world = np.empty_like(local)
    joints = np.zeros((count, 3))
    world[0] = local[0]
    parents = tree.parent_index
    for j in range(1, count):
        p = parents[j]
        joints[j] = joints[p] + world[p] @ offsets[j - 1]
        world[j] = world[p] @ local[j]
    return FKResult(joints, world, local, lengths)


@dataclass(frozen=True)
class KinematicJacobian:
    """
    Производные позиций суставов

    Attributes:
        joints_theta: (J, 3, 23, 6) по 6D поворотам суставов
        joints_lengths: (J, 3, B) по длинам костей
        lengths_beta: (B, 10) длин костей по beta (нули там, где сработало ограничение)
    """
    joints_theta: np.ndarray
    joints_lengths: np.ndarray
    lengths_beta: np.ndarray

    def pull(self, g_joints, g_lengths=None) -> Tuple[np.ndarray, np.ndarray]:
        """Переносит градиент по суставам (J, 3) и длинам (B,) на theta (23, 6) и beta (10,)"""
        g_joints = np.asarray(g_joints, dtype=float)
        g_theta = np.einsum('ja,jaki->ki', g_joints, self.joints_theta)
        total = np.einsum('ja,jab->b', g_joints, self.joints_lengths)
        if g_lengths is not None:
            total = total + np.asarray(g_lengths, dtype=float)
        return g_theta, total @ self.lengths_beta


def kinematic_jacobian(pose: BodyPose, shape: BodyShape, tree: KinematicTree, basis: ShapeBasis,
                       fk: Optional[FKResult] = None) -> KinematicJacobian:
    """
    Аналитический якобиан прямой кинематики (корень неподвижен).

    Поворот сустава q вращает все его строгие потомки j вокруг X_q:
    dX_j = R_мир(родителя q) dR_q R_мир(q)^T (X_j - X_q).
    Длина кости b сдвигает ее дочерний сустав и его потомков вдоль R_мир(родителя) * e_b.
    """
    if fk is None:
        fk = forward_kinematics(pose, shape, tree, basis)
    parents = tree.parent_index
    ancestors = tree.ancestors
    world = fk.rotations
    joints = fk.joints

    d_local = rot6d_jacobian(pose.theta)
    children = np.arange(1, tree.joint_count)
    moved = world[parents[children]][:, None] @ d_local @ np.swapaxes(world[children], -1, -2)[:, None]
    lever = (joints[:, None, :] - joints[None, children, :]) * ancestors[children].T[..., None]
    joints_theta = np.einsum('kiab,jkb->jaki', moved, lever)

    units = tree.rest_offsets[1:] / np.linalg.norm(tree.rest_offsets[1:], axis=1)[:, None]
    directions = np.einsum('bxy,by->bx', world[parents[children]], units)
    affected = ancestors[children].T | (np.arange(tree.joint_count)[:, None] == children[None, :])
    joints_lengths = affected[:, None, :] * directions.T[None]

    beta = np.asarray(shape.beta, dtype=float)
    free = np.abs(beta) <= BETA_LIMIT
    lengths_beta = basis.base_lengths[:, None] * basis.basis * free[None, :]
    lengths_beta[fk.lengths.clamped] = 0.0
    return KinematicJacobian(joints_theta, joints_lengths, lengths_beta)


@dataclass(frozen=True)
class BodySurface:
    """
    Поверхность тела из капсул

    Attributes:
        vertices: (V, 3) метры
        triangles: (T, 3) индексы вершин
        part_id: (T,) номер кости для каждого треугольника
        vertex_part: (V,) номер кости для каждой вершины
        normals: (V, 3) внешние нормали вершин
        axes: (P, 2, 3) концы осей капсул
        radii: (P,) радиусы капсул
        adjacent: пары смежных частей
        resolution: число сегментов окружности
    """
    vertices: np.ndarray
    triangles: np.ndarray
    part_id: np.ndarray
    vertex_part: np.ndarray
    normals: np.ndarray
    axes: np.ndarray
    radii: np.ndarray
    adjacent: FrozenSet[Tuple[int, int]] = frozenset()
    resolution: int = 8

    @property
    def part_count(self) -> int:
        return len(self.radii)

    def translated_part(self, part: int, offset) -> "BodySurface":
        """Копия поверхности со сдвинутой частью (вершины и ось капсулы)"""
        offset = np.asarray(offset, dtype=float)
        vertices = np.array(self.vertices)
        vertices[self.vertex_part == part] += offset
        axes = np.array(self.axes)
        axes[part] += offset
        return BodySurface(vertices, self.triangles, self.part_id, self.vertex_part, self.normals,
                           axes, self.radii, self.adjacent, self.resolution)

    def transformed(self, rotation, translation) -> "BodySurface":
        """Жесткое преобразование всей поверхности"""
        rotation = np.asarray(rotation, dtype=float)
        translation = np.asarray(translation, dtype=float)
        return BodySurface(self.vertices @ rotation.T + translation, self.triangles, self.part_id,
                           self.vertex_part, self.normals @ rotation.T, self.axes @ rotation.T + translation,
                           self.radii, self.adjacent, self.resolution)


def _perpendicular_frame(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(direction[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(direction, helper)
    u /= np.linalg.norm(u)
    v = np.cross(direction, u)
    return u, v


def capsule_mesh(start, end, radius: float, resolution: int = 8) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Замкнутая триангулированная капсула (род 0)

    Вершины: нижний полюс, 2m колец по resolution вершин, верхний полюс,
    m = max(1, resolution // 4).

    Returns:
        (вершины (V, 3), треугольники (T, 3), нормали (V, 3))
    """
    if int(resolution) < 3:
        raise ConfigError(f"Разрешение капсулы должно быть не меньше 3, получено {resolution}")
    if radius <= 0:
        raise ConfigError("Радиус капсулы должен быть положителен")
    n = int(resolution)
    m = max(1, n // 4)
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    axis = b - a
    length = np.linalg.norm(axis)
    d = axis / length if length > 1e-12 else np.array([0.0, 0.0, 1.0])
    u, v = _perpendicular_frame(d)

    psi = 2.0 * np.pi * np.arange(n) / n
    ring_dirs = np.cos(psi)[:, None] * u + np.sin(psi)[:, None] * v

    phis = 0.5 * np.pi * np.arange(1, m + 1) / m
    rings = []
    normals = []
    for phi in phis:
        normal = np.sin(phi) * ring_dirs - np.cos(phi) * d
        rings.append(a + radius * normal)
        normals.append(normal)
    for phi in phis[::-1]:
        normal = np.sin(phi) * ring_dirs + np.cos(phi) * d
        rings.append(b + radius * normal)
        normals.append(normal)

    vertices = np.vstack([a - radius * d] + rings + [b + radius * d])
    vertex_normals = np.vstack([-d] + normals + [d])
    top = len(vertices) - 1

    def ring_index(q, i):
        return 1 + q * n + (i % n)

    triangles = []
    for i in range(n):
        triangles.append((0, ring_index(0, i + 1), ring_index(0, i)))
    for q in range(2 * m - 1):
        for i in range(n):
            lo_a, lo_b = ring_index(q, i), ring_index(q, i + 1)
            hi_b, hi_a = ring_index(q + 1, i + 1), ring_index(q + 1, i)
            triangles.append((lo_a, lo_b, hi_b))
            triangles.append((lo_a, hi_b, hi_a))
    for i in range(n):
        triangles.append((top, ring_index(2 * m - 1, i), ring_index(2 * m - 1, i + 1)))
    return vertices, np.array(triangles, dtype=int), vertex_normals


def capsule_radii(model: BodyModel, lengths: BoneLengths) -> np.ndarray:
    """Радиусы масштабируются вместе с длиной кости"""
    return model.capsules.radii * lengths.lengths / model.basis.base_lengths


def surface_from_segments(axes, radii, resolution: int = 8,
                          adjacent: FrozenSet[Tuple[int, int]] = frozenset()) -> BodySurface:
    """Собирает поверхность из произвольного набора капсул"""
    axes = np.asarray(axes, dtype=float)
    radii = np.asarray(radii, dtype=float)
    vertex_blocks, triangle_blocks, normal_blocks, part_ids, vertex_parts = [], [], [], [], []
    offset = 0
    for part, ((start, end), radius) in enumerate(zip(axes, radii)):
        vertices, triangles, normals = capsule_mesh(start, end, float(radius), resolution)
        vertex_blocks.append(vertices)
        normal_blocks.append(normals)
        triangle_blocks.append(triangles + offset)
        part_ids.append(np.full(len(triangles), part, dtype=int))
        vertex_parts.append(np.full(len(vertices), part, dtype=int))
        offset += len(vertices)
    return BodySurface(
        vertices=np.vstack(vertex_blocks),
        triangles=np.vstack(triangle_blocks),
        part_id=np.concatenate(part_ids),
        vertex_part=np.concatenate(vertex_parts),
        normals=np.vstack(normal_blocks),
        axes=axes,
        radii=radii,
        adjacent=frozenset(adjacent),
        resolution=int(resolution),
    )


def bone_segments(fk: FKResult, tree: KinematicTree) -> np.ndarray:
    """Концы осей капсул по костям, (B, 2, 3)"""
    parents = tree.parent_index[1:]
    return np.stack([fk.joints[parents], fk.joints[1:]], axis=1)


def surface_from_fk(fk: FKResult, model: BodyModel) -> BodySurface:
    return surface_from_segments(bone_segments(fk, model.tree), capsule_radii(model, fk.lengths),
                                 model.capsules.resolution, model.tree.adjacent_bones)


def build_surface(pose: BodyPose, shape: BodyShape, model: BodyModel) -> BodySurface:
    """Капсула на каждую кость вдоль позированной оси"""
    fk = forward_kinematics(pose, shape, model.tree, model.basis)
    return surface_from_fk(fk, model)


def surface_to_obj(surface: BodySurface, colors: Optional[np.ndarray] = None) -> str:
    """
    Текст Wavefront OBJ (v/f, индексы с 1); при наличии цветов - 'v x y z r g b'
    """
    lines = ["# bodyfit capsule surface", f"# vertices {len(surface.vertices)} faces {len(surface.triangles)}"]
    if colors is None:
        for x, y, z in surface.vertices:
            lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    else:
        for (x, y, z), (r, g, b) in zip(surface.vertices, np.asarray(colors, dtype=float)):
            lines.append(f"v {x:.6f} {y:.6f} {z:.6f} {r:.4f} {g:.4f} {b:.4f}")
    for a, b, c in surface.triangles + 1:
        lines.append(f"f {a} {b} {c}")
    return "\n".join(lines) + "\n"


def joint_name_map(tree: KinematicTree) -> Dict[str, int]:
    return {name: i for i, name in enumerate(tree.joint_names)}
