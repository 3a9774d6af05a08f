#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Обнаружение взаимопроникновения частей тела и штраф за него.

Широкая фаза: AABB частей, затем AABB треугольников внутри пар частей.
Узкая фаза: точная проверка пересечения треугольников через пересечение
ребер одного треугольника с другим (Моллер-Трумбор). Соприкосновение
копланарных треугольников пересечением не считается.
"""

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, List, Set, Tuple

import numpy as np

from bodyfit.body_model import (BodyModel, BodySurface, FKResult, bone_segments, capsule_radii,
                                surface_from_segments)

logger = logging.getLogger(__name__)

PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class CollisionSet:
    """
    Пары пересекающихся треугольников

    Attributes:
        pairs: (K, 2) индексы треугольников (f_s, f_t)
        parts: (K, 2) номера частей этих треугольников
    """
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    parts: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def is_empty(self) -> bool:
        return len(self.pairs) == 0

    def part_pairs(self) -> Set[Tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.parts}


def segment_distance(p0, p1, q0, q1) -> np.ndarray:
    """
    Кратчайшее расстояние между отрезками [p0, p1] и [q0, q1] (векторизовано по первой оси)
    """
    p0, p1, q0, q1 = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (p0, p1, q0, q1))
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    f = np.sum(d2 * r, axis=-1)

    eps = 1e-18
    p_point = a <= eps
    q_point = e <= eps
    safe_a = np.where(p_point, 1.0, a)
    safe_e = np.where(q_point, 1.0, e)
    denom = a * e - b * b

    s = np.where(denom > eps, np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    below = t < 0.0
    above = t > 1.0
    s = np.where(below, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(above, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # вырожденные отрезки
    s = np.where(q_point, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(q_point, 0.0, t)
    s = np.where(p_point, 0.0, s)
    t = np.where(p_point, np.clip(f / safe_e, 0.0, 1.0), t)
    t = np.where(p_point & q_point, 0.0, t)

    closest_p = p0 + s[:, None] * d1
    closest_q = q0 + t[:, None] * d2
    return np.linalg.norm(closest_p - closest_q, axis=-1)


def point_segment_distance(points, start, end) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    start = np.asarray(start, dtype=float)
    axis = np.asarray(end, dtype=float) - start
    length_sq = float(axis @ axis)
    if length_sq < 1e-24:
        return np.linalg.norm(points - start, axis=-1)
    t = np.clip((points - start) @ axis / length_sq, 0.0, 1.0)
    return np.linalg.norm(points - (start + t[..., None] * axis), axis=-1)


def capsule_sdf(points, start, end, radius: float) -> np.ndarray:
    """Знаковое расстояние до капсулы (отрицательное внутри)"""
    return point_segment_distance(points, start, end) - radius


def candidate_capsule_pairs(axes, radii, adjacent: FrozenSet[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Несмежные пары капсул, аналитически перекрывающиеся"""
    axes = np.asarray(axes, dtype=float)
    radii = np.asarray(radii, dtype=float)
    count = len(radii)
    first, second = np.triu_indices(count, k=1)
    keep = np.array([(int(a), int(b)) not in adjacent for a, b in zip(first, second)], dtype=bool)
    first, second = first[keep], second[keep]
    if len(first) == 0:
        return []
    distance = segment_distance(axes[first, 0], axes[first, 1], axes[second, 0], axes[second, 1])
    overlap = distance < radii[first] + radii[second]
    return [(int(a), int(b)) for a, b in zip(first[overlap], second[overlap])]


def _boxes_overlap(lo_a, hi_a, lo_b, hi_b) -> np.ndarray:
    return np.all((lo_a <= hi_b) & (lo_b <= hi_a), axis=-1)


def _edges_hit_triangles(edge_start, edge_end, tri) -> np.ndarray:
    """
    Пересекает ли отрезок треугольник. edge_*: (N, 3), tri: (N, 3, 3)
    """
    direction = edge_end - edge_start
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    h = np.cross(direction, e2)
    a = np.sum(e1 * h, axis=-1)
    valid = np.abs(a) > PARALLEL_EPS
    inv = np.where(valid, 1.0 / np.where(valid, a, 1.0), 0.0)
    s = edge_start - v0
    u = inv * np.sum(s * h, axis=-1)
    q = np.cross(s, e1)
    v = inv * np.sum(direction * q, axis=-1)
    t = inv * np.sum(e2 * q, axis=-1)
    return valid & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0) & (t <= 1.0)


def triangles_intersect(tri_a, tri_b) -> np.ndarray:
    """
    Точная проверка пересечения пар треугольников

    Args:
        tri_a, tri_b: (N, 3, 3) вершины треугольников

    Returns:
        np.ndarray: (N,) bool
    """
    tri_a = np.asarray(tri_a, dtype=float).reshape(-1, 3, 3)
    tri_b = np.asarray(tri_b, dtype=float).reshape(-1, 3, 3)
    hit = np.zeros(len(tri_a), dtype=bool)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        hit |= _edges_hit_triangles(tri_a[:, i], tri_a[:, j], tri_b)
        hit |= _edges_hit_triangles(tri_b[:, i], tri_b[:, j], tri_a)
    return hit


def detect_collisions(surface: BodySurface) -> CollisionSet:
    """
    Все пересекающиеся пары треугольников несмежных частей
    """
    vertices = surface.vertices
    corners = vertices[surface.triangles]
    tri_lo = corners.min(axis=1)
    tri_hi = corners.max(axis=1)

    parts = surface.part_count
    part_lo = np.array([tri_lo[surface.part_id == p].min(axis=0) for p in range(parts)])
    part_hi = np.array([tri_hi[surface.part_id == p].max(axis=0) for p in range(parts)])
    part_triangles = [np.flatnonzero(surface.part_id == p) for p in range(parts)]

    found_pairs, found_parts = [], []
    for a in range(parts):
        for b in range(a + 1, parts):
            if (a, b) in surface.adjacent:
                continue
            if not _boxes_overlap(part_lo[a], part_hi[a], part_lo[b], part_hi[b]):
                continue
            ta, tb = part_triangles[a], part_triangles[b]
            overlap = _boxes_overlap(tri_lo[ta][:, None], tri_hi[ta][:, None], tri_lo[tb][None], tri_hi[tb][None])
            ia, ib = np.nonzero(overlap)
            if len(ia) == 0:
                continue
            hit = triangles_intersect(corners[ta[ia]], corners[tb[ib]])
            if np.any(hit):
                found_pairs.append(np.stack([ta[ia[hit]], tb[ib[hit]]], axis=1))
                found_parts.append(np.tile([a, b], (int(np.sum(hit)), 1)))

    if not found_pairs:
        return CollisionSet()
    collisions = CollisionSet(np.vstack(found_pairs), np.vstack(found_parts))
    logger.debug(f"Найдено пересечений треугольников: {len(collisions)}, пар частей: {len(collisions.part_pairs())}")
    return collisions


def physics_loss(surface: BodySurface, collisions: CollisionSet) -> float:
    """
    Штраф за проникновение: для каждой пары частей с пересечениями сумма
    ||-Psi_t(v_s) * n_s||^2 по вершинам v_s части s внутри капсулы t
    и симметрично для t. Каждая вершина учитывается один раз на пару частей.
    """
    if collisions.is_empty:
        return 0.0
    total = 0.0
    for s, t in sorted(collisions.part_pairs()):
        for intruder, receiver in ((s, t), (t, s)):
            mask = surface.vertex_part == intruder
            sdf = capsule_sdf(surface.vertices[mask], surface.axes[receiver, 0], surface.axes[receiver, 1],
                              float(surface.radii[receiver]))
            inside = sdf < 0.0
            if not np.any(inside):
                continue
            penalty = -sdf[inside, None] * surface.normals[mask][inside]
            total += float(np.sum(penalty * penalty))
    return total


def _pair_physics(axes, radii, resolution: int) -> Tuple[float, int]:
    """Штраф и число пересечений для пары несмежных капсул, сетка только этих двух частей"""
    surface = surface_from_segments(axes, radii, resolution)
    collisions = detect_collisions(surface)
    return physics_loss(surface, collisions), len(collisions)


def physics_loss_from_fk(fk: FKResult, model: BodyModel) -> Tuple[float, int]:
    """
    Быстрый путь для подгонки: сетка строится только для пар капсул, перекрывающихся
    аналитически (сетка вписана в капсулу, поэтому пропусков нет). Значение совпадает
    с physics_loss по полной поверхности.

    Returns:
        (значение штрафа, число пересекающихся пар треугольников)
    """
    axes = bone_segments(fk, model.tree)
    radii = capsule_radii(model, fk.lengths)
    total, count = 0.0, 0
    for a, b in candidate_capsule_pairs(axes, radii, model.tree.adjacent_bones):
        value, hits = _pair_physics(axes[[a, b]], radii[[a, b]], model.capsules.resolution)
        total += value
        count += hits
    return total, count


def physics_segment_gradient(axes, radii, adjacent: FrozenSet[Tuple[int, int]], resolution: int = 8,
                             step: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Градиент штрафа по концам осей капсул (P, 2, 3) и радиусам (P,).

    Центральные разности по 12 координатам концов и 2 радиусам каждой пары,
    сетки которой уже пересекаются; остальные пары дают ноль.
    """
    axes = np.asarray(axes, dtype=float)
    radii = np.asarray(radii, dtype=float)
    g_axes = np.zeros_like(axes)
    g_radii = np.zeros_like(radii)
    for a, b in candidate_capsule_pairs(axes, radii, adjacent):
        pair_axes = axes[[a, b]]
        pair_radii = radii[[a, b]]
        if _pair_physics(pair_axes, pair_radii, resolution)[1] == 0:
            continue
        grad = np.zeros(pair_axes.size + 2)
        for i in range(len(grad)):
            values = []
            for sign in (1.0, -1.0):
                shifted_axes = pair_axes.copy()
                shifted_radii = pair_radii.copy()
                if i < pair_axes.size:
                    shifted_axes.reshape(-1)[i] += sign * step
                else:
                    shifted_radii[i - pair_axes.size] += sign * step
                values.append(_pair_physics(shifted_axes, shifted_radii, resolution)[0])
            grad[i] = (values[0] - values[1]) / (2.0 * step)
        g_axes[[a, b]] += grad[:pair_axes.size].reshape(pair_axes.shape)
        g_radii[[a, b]] += grad[pair_axes.size:]
    return g_axes, g_radii
