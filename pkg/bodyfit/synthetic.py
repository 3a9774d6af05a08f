#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Синтетические тела для проверки подгонки: допустимая поза внутри всех пределов
без пересечений, проекция слабой перспективой, шум и "закрытые" конечности.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from bodyfit.body_model import BodyPose, BodyShape, SHAPE_DIM, forward_kinematics
from bodyfit.camera import CameraParams, project_weak_perspective
from bodyfit.collision import physics_loss_from_fk
from bodyfit.constraints import (ModelAssets, biomechanics_loss, pose_euler_angles, pose_from_euler,
                                 update_dependent_bounds)
from bodyfit.errors import ConfigError
from bodyfit.probabilistic import Keypoints2D
from bodyfit.rotations import axis_rotation, matrix_to_rot6d

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 300.0
DEFAULT_CENTER = (256.0, 256.0)
MAX_ATTEMPTS = 200

LIMBS: Dict[str, Tuple[str, ...]] = {
    "left_arm": ("left_elbow", "left_wrist", "left_hand"),
    "right_arm": ("right_elbow", "right_wrist", "right_hand"),
    "left_leg": ("left_knee", "left_ankle", "left_foot"),
    "right_leg": ("right_knee", "right_ankle", "right_foot"),
}


@dataclass(frozen=True)
class SyntheticSample:
    """Истинные параметры и их наблюдение"""
    pose: BodyPose
    shape: BodyShape
    camera: CameraParams
    joints: np.ndarray
    keypoints: Keypoints2D


def is_feasible(pose: BodyPose, shape: BodyShape, assets: ModelAssets) -> bool:
    """Поза внутри динамических пределов и без взаимопроникновения"""
    fk = forward_kinematics(pose, shape, assets.tree, assets.basis)
    angles = pose_euler_angles(fk.local_rotations[1:], assets.tree, assets.limits)
    dynamic = update_dependent_bounds(angles, assets.limits, assets.rules)
    if biomechanics_loss(angles, dynamic) > 0:
        return False
    physics, _ = physics_loss_from_fk(fk, assets.model)
    return physics == 0.0


def sample_feasible_pose(assets: ModelAssets, rng: np.random.Generator, spread: float = 0.4,
                         shape: Optional[BodyShape] = None) -> BodyPose:
    """
    Углы равномерно в доле spread каждого предела вокруг нуля; отбор по допустимости
    """
    shape = shape or BodyShape()
    lower = assets.limits.lower
    upper = assets.limits.upper
    for attempt in range(MAX_ATTEMPTS):
        angles = spread * rng.uniform(lower, upper)
        pose = pose_from_euler(angles, assets.tree)
        if is_feasible(pose, shape, assets):
            logger.debug(f"Допустимая поза найдена с попытки {attempt + 1}")
            return pose
    raise ConfigError(f"Не удалось получить допустимую позу за {MAX_ATTEMPTS} попыток")


def synthetic_camera(rng: np.random.Generator, yaw_range: float = 30.0, scale: float = DEFAULT_SCALE) -> CameraParams:
    """Камера: ось y изображения вниз, небольшой поворот тела вокруг вертикали"""
    yaw = rng.uniform(-yaw_range, yaw_range)
    rotation = axis_rotation(0, 180.0) @ axis_rotation(1, yaw)
    return CameraParams(scale, matrix_to_rot6d(rotation), np.array(DEFAULT_CENTER))


def synthetic_sample(assets: ModelAssets, seed: int, noise_px: float = 0.0, spread: float = 0.4,
                     beta_std: float = 0.3, camera: Optional[CameraParams] = None,
                     occlude: Sequence[str] = ()) -> SyntheticSample:
    """
    Истинное тело и его 2D наблюдение по всем 24 суставам

    Args:
        noise_px: СКО гауссова шума на координатах, пиксели
        occlude: конечности из LIMBS, точки которых получают уверенность 0
    """
    rng = np.random.default_rng([int(seed), 7])
    shape = BodyShape(np.clip(rng.normal(0.0, beta_std, SHAPE_DIM), -1.5, 1.5))
    pose = sample_feasible_pose(assets, rng, spread, shape)
    camera = camera or synthetic_camera(rng)
    fk = forward_kinematics(pose, shape, assets.tree, assets.basis)
    projected = project_weak_perspective(fk.joints, camera)
    if noise_px > 0:
        projected = projected + rng.normal(0.0, noise_px, projected.shape)
    keypoints = occlude_limbs(Keypoints2D.from_projection(projected, assets.tree), occlude)
    return SyntheticSample(pose, shape, camera, fk.joints, keypoints)


def occlude_limbs(keypoints: Keypoints2D, limbs: Sequence[str]) -> Keypoints2D:
    """Обнуляет уверенность точек указанных конечностей"""
    if not limbs:
        return keypoints
    hidden = set()
    for limb in limbs:
        if limb not in LIMBS:
            raise ConfigError(f"Неизвестная конечность: {limb}")
        hidden.update(LIMBS[limb])
    confidence = np.where([name in hidden for name in keypoints.names], 0.0, keypoints.confidence)
    return keypoints.with_confidence(confidence)
