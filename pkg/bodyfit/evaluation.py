#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Метрики реконструкции (MPE, P-MPE) и аудит соблюдения ограничений тела
для отдельных поз и корпусов разметки.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from bodyfit.body_model import BodyPose, BodyShape, forward_kinematics
from bodyfit.collision import physics_loss_from_fk
from bodyfit.constraints import (ModelAssets, angle_violations, geometry_angles, pose_euler_angles,
                                 update_dependent_bounds)
from bodyfit.errors import InvalidInputError, NoDataError

logger = logging.getLogger(__name__)

METERS_TO_MM = 1000.0
DEGENERATE_RATIO = 1e-9

AUDIT_COLUMNS = ["sample", "bone_error_mm", "coplanar_angle_deg", "collinear_angle_deg",
                 "angle_violation_deg", "angle_violation_inter_deg", "penetration", "penetration_percentage", "error"]
METRIC_COLUMNS = AUDIT_COLUMNS[1:6]


def _check_pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise InvalidInputError(f"Число суставов не совпадает: {pred.shape} и {gt.shape}")
    return pred, gt


def mpe(pred, gt, root: int = 0, align_root: bool = True) -> float:
    """Средняя ошибка положения сустава после совмещения корней, мм"""
    pred, gt = _check_pair(pred, gt)
    if align_root:
        pred = pred - pred[root]
        gt = gt - gt[root]
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * METERS_TO_MM)


def umeyama(src, dst, with_scale: bool = True) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Подобие dst ~ s * R @ src + t по SVD взаимной ковариации, det(R) = +1

    Raises:
        InvalidInputError: точки вырождены (все на одной прямой)
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    x = src - mu_src
    y = dst - mu_dst
    dim = src.shape[1]
    for points in (x, y):
        singular = np.linalg.svd(points, compute_uv=False)
        if len(singular) < 2 or singular[1] <= DEGENERATE_RATIO * max(singular[0], 1e-300):
            raise InvalidInputError("Вырожденная конфигурация точек: выравнивание неопределимо")

    covariance = y.T @ x / len(src)
    u, d, vt = np.linalg.svd(covariance)
    fix = np.eye(dim)
    fix[-1, -1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rotation = u @ fix @ vt
    scale = float(np.trace(np.diag(d) @ fix) / np.mean(np.sum(x ** 2, axis=1))) if with_scale else 1.0
    translation = mu_dst - scale * rotation @ mu_src
    return scale, rotation, translation


def pmpe(pred, gt, with_scale: bool = True) -> float:
    """MPE после оптимального подобия (поворот, сдвиг и масштаб), мм"""
    pred, gt = _check_pair(pred, gt)
    if len(pred) < 3:
        raise InvalidInputError("Для выравнивания нужно не меньше 3 суставов")
    scale, rotation, translation = umeyama(pred, gt, with_scale)
    aligned = scale * pred @ rotation.T + translation
    return float(np.mean(np.linalg.norm(aligned - gt, axis=-1)) * METERS_TO_MM)


@dataclass(frozen=True)
class AuditReport:
    """
    Нарушения ограничений одной позы

    Attributes:
        bone_error_mm: средняя ошибка длины кости относительно антропометрии
        coplanar_angle_deg, collinear_angle_deg: углы геометрии торса
        angle_violation_deg: среднее по суставам нарушение статических пределов
        angle_violation_inter_deg: то же с учетом межсуставных зависимостей
        penetration: есть ли взаимопроникновение
        violations: записи о каждом нарушенном угле
    """
    bone_error_mm: float
    coplanar_angle_deg: float
    collinear_angle_deg: float
    angle_violation_deg: float
    angle_violation_inter_deg: float
    penetration: bool
    colliding_triangles: int = 0
    violations: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bone_error_mm": self.bone_error_mm,
            "geometry_angles_deg": [self.coplanar_angle_deg, self.collinear_angle_deg],
            "angle_violation_deg": self.angle_violation_deg,
            "angle_violation_inter_deg": self.angle_violation_inter_deg,
            "penetration_flag": self.penetration,
            "colliding_triangles": self.colliding_triangles,
            "violations": self.violations,
        }

    def row(self, sample: str) -> dict:
        return {
            "sample": sample,
            "bone_error_mm": self.bone_error_mm,
            "coplanar_angle_deg": self.coplanar_angle_deg,
            "collinear_angle_deg": self.collinear_angle_deg,
            "angle_violation_deg": self.angle_violation_deg,
            "angle_violation_inter_deg": self.angle_violation_inter_deg,
            "penetration": int(self.penetration),
            "penetration_percentage": np.nan,
            "error": "",
        }


def _violation_records(angles, limits, kind: str, joint_names: Sequence[str]) -> List[dict]:
    records = []
    magnitude = angle_violations(angles, limits)
    for joint, axis in np.argwhere(magnitude > 0):
        records.append({
            "kind": kind,
            "joint": joint_names[joint],
            "axis": int(axis),
            "angle_deg": float(angles[joint, axis]),
            "lower": float(limits.lower[joint, axis]),
            "upper": float(limits.upper[joint, axis]),
            "magnitude_deg": float(magnitude[joint, axis]),
        })
    return records


def audit_constraints(pose: BodyPose, shape: BodyShape, assets: ModelAssets) -> AuditReport:
    """Все поля отчета по примитивам модуля ограничений; нарушения углов в градусах"""
    tree = assets.tree
    fk = forward_kinematics(pose, shape, tree, assets.basis)

    table = assets.anthropometry
    predicted = np.array([fk.lengths.lengths[list(e.bones)].sum() for e in table.entries])
    bone_error = float(np.mean(np.abs(predicted - table.targets())) * METERS_TO_MM)

    coplanar, collinear = geometry_angles(fk.joints, tree.geometry_roles)

    angles = pose_euler_angles(fk.local_rotations[1:], tree, assets.limits)
    dynamic = update_dependent_bounds(angles, assets.limits, assets.rules)
    static_violation = angle_violations(angles, assets.limits)
    inter_violation = angle_violations(angles, dynamic)
    names = tree.joint_names[1:]
    records = (_violation_records(angles, assets.limits, "static", names)
               + _violation_records(angles, dynamic, "inter", names))

    _, colliding = physics_loss_from_fk(fk, assets.model)
    return AuditReport(
        bone_error_mm=bone_error,
        coplanar_angle_deg=coplanar,
        collinear_angle_deg=collinear,
        angle_violation_deg=float(np.mean(static_violation.sum(axis=1))),
        angle_violation_inter_deg=float(np.mean(inter_violation.sum(axis=1))),
        penetration=colliding > 0,
        colliding_triangles=int(colliding),
        violations=records,
    )


@dataclass(frozen=True)
class CorpusAudit:
    """Таблица аудита корпуса: строка на образец и итоговая строка summary"""
    frame: pd.DataFrame
    penetration_percentage: float


def summarize_audits(names: Sequence[str], reports: Sequence[Union[AuditReport, str]]) -> CorpusAudit:
    """
    Таблица корпуса; элемент-строка в reports - сообщение об ошибке образца.
    Образец с ошибкой дает строку с заполненным столбцом error и входит в знаменатель процента.
    """
    if not reports:
        raise NoDataError("Пустой корпус")
    rows = []
    for name, report in zip(names, reports):
        if isinstance(report, AuditReport):
            rows.append(report.row(name))
        else:
            rows.append({"sample": name, "penetration": pd.NA, "error": str(report)})
    frame = pd.DataFrame(rows, columns=AUDIT_COLUMNS).astype({"penetration": "Int64"})
    failed = int(frame["error"].ne("").sum())
    penetrating = int(frame["penetration"].sum())
    percentage = float(100.0 * penetrating / len(frame))
    summary = {column: float(frame[column].mean()) for column in METRIC_COLUMNS}
    summary.update({"sample": "summary", "penetration": penetrating, "penetration_percentage": percentage,
                    "error": f"ошибок: {failed}" if failed else ""})
    frame = pd.concat([frame, pd.DataFrame([summary], columns=AUDIT_COLUMNS).astype({"penetration": "Int64"})],
                      ignore_index=True)
    if failed:
        logger.warning(f"Аудит корпуса: {failed} из {len(reports)} образцов с ошибкой")
    logger.info(f"Аудит корпуса: {len(reports)} образцов, взаимопроникновение в {percentage:.1f}%")
    return CorpusAudit(frame, percentage)


def audit_corpus(items: Sequence[Tuple[str, BodyPose, BodyShape]], assets: ModelAssets) -> CorpusAudit:
    """Последовательный аудит корпуса (name, pose, shape)"""
    names = [name for name, _, _ in items]
    reports = [audit_constraints(pose, shape, assets) for _, pose, shape in items]
    return summarize_audits(names, reports)
