#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Подгонка гауссова убеждения и алеаторной модели к 2D ключевым точкам.

Целевая функция: w * (lambda_kp * NLL [+ lambda_pair * L_pair3d]) + L_generic + штраф следа ковариации.
Оптимизатор - Adam с шагом для каждой группы параметров. Градиент слагаемого данных
аналитический (якобиан кинематики и камеры), общие потери дифференцируются разностями
только по своим малым входам; несколько перезапусков, лучший по итоговой потере.
Дисперсии убеждения после подгонки - диагональная аппроксимация Лапласа.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from bodyfit.body_model import (BodyPose, BodyShape, FKResult, KinematicJacobian, SHAPE_DIM, forward_kinematics,
                                kinematic_jacobian)
from bodyfit.camera import CameraParams, project_weak_perspective
from bodyfit.constraints import (GenericLoss, GenericWeights, ModelAssets, generic_gradient, generic_loss,
                                 pose_euler_angles, pose_from_euler)
from bodyfit.errors import (BodyFitError, ConfigError, InvalidArgumentError, InvalidInputError, NoDataError,
                            UnderConstrainedError)
from bodyfit.evaluation import umeyama
from bodyfit.probabilistic import (AleatoricModel, GaussianBelief, Keypoints2D, MAX_KEYPOINT_VARIANCE,
                                   MIN_KEYPOINT_VARIANCE, UncertaintyReport, body_projector,
                                   covariance_trace_penalty, decompose_uncertainty, mse_loss, nll_loss,
                                   refinement_weights, sample_parameters)
from bodyfit.rotations import axis_rotation, matrix_to_rot6d, rot6d_jacobian, rot6d_to_matrix
from bodyfit.workers import parallel_map

logger = logging.getLogger(__name__)

MIN_VISIBLE_KEYPOINTS = 6
FIT_BELIEF_VARIANCE = 1e-14
CACHE_SIZE = 8
TORSO_JOINTS = ("pelvis", "left_hip", "right_hip", "spine1", "spine2", "spine3", "neck",
                "left_collar", "right_collar", "left_shoulder", "right_shoulder")
KEYPOINT_LOSSES = ("nll", "mse")


@dataclass(frozen=True)
class FitConfig:
    """Веса потерь и управление оптимизатором"""
    keypoint_weight: float = 10.0
    anatomy_weight: float = 500.0
    biomechanics_weight: float = 1000.0
    physics_weight: float = 1000.0
    beta_weight: float = 0.001
    geometry_weight: float = 1.0
    collinear_weight: float = 1.0
    cov_trace_weight: float = 50.0
    pair3d_weight: float = 1e5
    refinement_scale: float = 1.0
    keypoint_loss: str = "nll"
    max_iterations: int = 400
    pose_lr: float = 0.02
    shape_lr: float = 0.02
    camera_lr: float = 0.01
    translation_lr: float = 1.0
    variance_lr: float = 0.1
    lr_decay: float = 0.5
    decay_every: int = 80
    tolerance: float = 1e-6
    window: int = 20
    restarts: int = 4
    restart_sigma_deg: float = 10.0
    nll_samples: int = 1
    uncertainty_samples: int = 64
    initial_variance: float = 4.0
    fd_step: float = 1e-4
    laplace_step: float = 1e-3
    laplace_max: float = 0.05
    laplace_min: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("keypoint_weight", "anatomy_weight", "biomechanics_weight", "physics_weight", "beta_weight",
                     "geometry_weight", "collinear_weight", "cov_trace_weight", "pair3d_weight"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} должен быть неотрицательным, получено {value}")
        if self.keypoint_loss not in KEYPOINT_LOSSES:
            raise ConfigError(f"keypoint_loss должен быть одним из {KEYPOINT_LOSSES}")
        if self.max_iterations < 1 or self.restarts < 1 or self.nll_samples < 1 or self.window < 1:
            raise ConfigError("Число итераций, перезапусков, выборок и окно должны быть не меньше 1")
        if self.uncertainty_samples < 2:
            raise ConfigError("Для оценки неопределенности нужно не меньше 2 выборок")
        for name in ("pose_lr", "shape_lr", "camera_lr", "translation_lr", "variance_lr", "tolerance",
                     "fd_step", "laplace_step", "laplace_max", "laplace_min", "initial_variance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} должен быть положительным")
        if not 0 < self.lr_decay <= 1 or self.decay_every < 1:
            raise ConfigError("lr_decay должен лежать в (0, 1], decay_every - не меньше 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"Зерно должно быть 64-битным беззнаковым, получено {self.seed}")

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Неизвестные параметры подгонки: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def generic_weights(self) -> GenericWeights:
        return GenericWeights(anatomy=self.anatomy_weight, biomechanics=self.biomechanics_weight,
                              physics=self.physics_weight, beta=self.beta_weight,
                              geometry=self.geometry_weight, collinear=self.collinear_weight)


@dataclass(frozen=True)
class FitResult:
    """
    Результат подгонки

    Attributes:
        belief: средние - точечная оценка, дисперсии - аппроксимация Лапласа
        aleatoric: алеаторная модель ключевых точек
        losses: слагаемые целевой функции в найденной точке ("total" - итог)
        report: разложение неопределенности
        converged: достигнут ли критерий сходимости
        iterations: число итераций выбранного перезапуска
        restart: номер выбранного перезапуска
        restart_losses: итоговые потери всех перезапусков
        weight: множитель слагаемого данных (1 при начальной подгонке)
        seed: зерно
        error: сообщение об ошибке при неудачном уточнении
    """
    belief: GaussianBelief
    aleatoric: AleatoricModel
    losses: Dict[str, float]
    report: UncertaintyReport
    converged: bool
    iterations: int
    restart: int
    restart_losses: Tuple[float, ...] = ()
    weight: float = 1.0
    seed: int = 0
    error: Optional[str] = None

    @property
    def total_loss(self) -> float:
        return self.losses["total"]

    def joints(self, assets: ModelAssets) -> np.ndarray:
        return forward_kinematics(self.belief.pose, self.belief.shape, assets.tree, assets.basis).joints

    def to_dict(self) -> dict:
        return {
            "belief": self.belief.to_dict(),
            "aleatoric": self.aleatoric.to_dict(),
            "losses": dict(self.losses),
            "uncertainty": self.report.to_dict(),
            "diagnostics": {
                "converged": self.converged,
                "iterations": self.iterations,
                "restart": self.restart,
                "restart_losses": list(self.restart_losses),
                "weight": self.weight,
                "seed": self.seed,
                "error": self.error,
            },
        }


@dataclass
class _Layout:
    """Разметка вектора параметров: theta, beta, log s, R (6D), t, log sigma^2"""
    pose_joints: int
    keypoint_joints: int
    slices: Dict[str, slice] = field(default_factory=dict)

    def __post_init__(self):
        sizes = [("theta", 6 * self.pose_joints), ("beta", SHAPE_DIM), ("log_s", 1), ("rotation", 6),
                 ("t", 2), ("log_var", self.keypoint_joints)]
        start = 0
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.size = start


def pair3d_loss(predicted, gt) -> float:
    """Сумма квадратов 3D невязок суставов, м^2"""
    predicted = np.asarray(predicted, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if predicted.shape != gt.shape:
        raise InvalidInputError(f"Размерности суставов не совпадают: {predicted.shape} и {gt.shape}")
    return float(np.sum((predicted - gt) ** 2))


class FitObjective:
    """
    Целевая функция над вектором параметров с кэшем прямой кинематики
    и общих потерь (по байтам theta и beta)
    """

    def __init__(self, observed: Keypoints2D, config: FitConfig, assets: ModelAssets, weight: float = 1.0,
                 gt3d: Optional[np.ndarray] = None):
        self.observed = observed
        self.config = config
        self.assets = assets
        self.weight = float(weight)
        self.gt3d = None if gt3d is None else np.asarray(gt3d, dtype=float)
        if self.gt3d is not None and self.gt3d.shape != (assets.tree.joint_count, 3):
            raise InvalidInputError(f"3D суставы должны иметь форму ({assets.tree.joint_count}, 3), "
                                    f"получено {self.gt3d.shape}")
        self.layout = _Layout(assets.tree.pose_joint_count, assets.tree.joint_count)
        self.weights = config.generic_weights()
        self._fk_cache: "OrderedDict[bytes, FKResult]" = OrderedDict()
        self._generic_cache: "OrderedDict[bytes, GenericLoss]" = OrderedDict()

    # --- упаковка параметров ---

    def pack(self, belief: GaussianBelief, aleatoric: AleatoricModel) -> np.ndarray:
        s = self.layout.slices
        x = np.zeros(self.layout.size)
        x[s["theta"]] = belief.mean_theta.ravel()
        x[s["beta"]] = belief.mean_beta
        x[s["log_s"]] = math.log(belief.mean_cam.s)
        x[s["rotation"]] = belief.mean_cam.rotation
        x[s["t"]] = belief.mean_cam.t
        x[s["log_var"]] = aleatoric.log_variance
        return x

    def unpack(self, x) -> Tuple[np.ndarray, np.ndarray, CameraParams, AleatoricModel]:
        s = self.layout.slices
        theta = x[s["theta"]].reshape(self.layout.pose_joints, 6)
        camera = CameraParams(float(np.exp(x[s["log_s"]][0])), x[s["rotation"]], x[s["t"]])
        return theta, x[s["beta"]].copy(), camera, AleatoricModel(x[s["log_var"]])

    def normalize(self, x) -> np.ndarray:
        """Ортонормирует 6D блоки и ограничивает логарифмы дисперсий"""
        s = self.layout.slices
        x = np.array(x, dtype=float)
        theta = x[s["theta"]].reshape(self.layout.pose_joints, 6)
        x[s["theta"]] = matrix_to_rot6d(rot6d_to_matrix(theta)).ravel()
        x[s["rotation"]] = matrix_to_rot6d(rot6d_to_matrix(x[s["rotation"]]))
        x[s["log_var"]] = np.clip(x[s["log_var"]], math.log(MIN_KEYPOINT_VARIANCE), math.log(MAX_KEYPOINT_VARIANCE))
        return x

    # --- кэшированные вычисления ---

    @staticmethod
    def _remember(cache: OrderedDict, key: bytes, value):
        cache[key] = value
        if len(cache) > CACHE_SIZE:
            cache.popitem(last=False)
        return value

    def fk(self, theta, beta) -> FKResult:
        key = np.asarray(theta, dtype=float).tobytes() + np.asarray(beta, dtype=float).tobytes()
        if key in self._fk_cache:
            return self._fk_cache[key]
        fk = forward_kinematics(BodyPose(theta), BodyShape(beta), self.assets.tree, self.assets.basis)
        return self._remember(self._fk_cache, key, fk)

    def generic(self, theta, beta) -> GenericLoss:
        key = np.asarray(theta, dtype=float).tobytes() + np.asarray(beta, dtype=float).tobytes()
        if key in self._generic_cache:
            return self._generic_cache[key]
        value = generic_loss(BodyPose(theta), BodyShape(beta), self.assets, self.weights, fk=self.fk(theta, beta))
        return self._remember(self._generic_cache, key, value)

    def project(self, theta, beta, camera: CameraParams) -> np.ndarray:
        return project_weak_perspective(self.fk(theta, beta).joints, camera)

    # --- значение ---

    def breakdown(self, x) -> Dict[str, float]:
        theta, beta, camera, aleatoric = self.unpack(x)
        if self.config.keypoint_loss == "nll":
            belief = GaussianBelief.point(theta, beta, camera, FIT_BELIEF_VARIANCE)
            keypoint = nll_loss(belief, aleatoric, self.observed, self.project, self.config.nll_samples,
                                self.config.seed)
        else:
            keypoint = mse_loss(self.project(theta, beta, camera), self.observed)
        pair = 0.0 if self.gt3d is None else pair3d_loss(self.fk(theta, beta).joints, self.gt3d)
        data = self.weight * (self.config.keypoint_weight * keypoint + self.config.pair3d_weight * pair)
        generic = self.generic(theta, beta)
        cov = covariance_trace_penalty(aleatoric, self.config.cov_trace_weight, self.observed.joint_index)
        losses = {"keypoint": keypoint, "pair3d": pair, "data": data, "cov_trace": cov}
        losses.update(generic.terms)
        losses["total"] = data + generic.total + cov
        return losses

    def __call__(self, x) -> float:
        return self.breakdown(x)["total"]

    def active_mask(self) -> np.ndarray:
        """Параметры, от которых зависит потеря (логарифмы дисперсий - только наблюдаемых точек)"""
        mask = np.ones(self.layout.size, dtype=bool)
        log_var = np.zeros(self.layout.keypoint_joints, dtype=bool)
        log_var[self.observed.joint_index] = True
        mask[self.layout.slices["log_var"]] = log_var
        return mask

    def numeric_gradient(self, x, step: Optional[float] = None, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Центральные конечные разности по всем активным параметрам (эталон для проверки)"""
        step = self.config.fd_step if step is None else step
        mask = self.active_mask() if mask is None else mask
        grad = np.zeros_like(x)
        for i in np.flatnonzero(mask):
            shifted = np.array(x)
            shifted[i] = x[i] + step
            f_plus = self(shifted)
            shifted[i] = x[i] - step
            f_minus = self(shifted)
            grad[i] = (f_plus - f_minus) / (2.0 * step)
        return grad

    def jacobian(self, theta, beta) -> KinematicJacobian:
        return kinematic_jacobian(BodyPose(theta), BodyShape(beta), self.assets.tree, self.assets.basis,
                                  fk=self.fk(theta, beta))

    def _keypoint_terms(self, theta, beta, camera: CameraParams, aleatoric: AleatoricModel):
        """
        Выборки точек данных: (веса выборок, [(theta_s, beta_s, dL/dp (J, 2))], dL/dlog sigma^2 (J,))
        """
        observed = self.observed
        visible = observed.visible
        index = observed.joint_index[visible]
        confidence = observed.confidence[visible]
        joints = self.assets.tree.joint_count
        if self.config.keypoint_loss == "mse":
            residual = self.project(theta, beta, camera)[index] - observed.xy[visible]
            g_proj = np.zeros((joints, 2))
            g_proj[index] = 2.0 * confidence[:, None] * residual / np.sum(confidence)
            return np.ones(1), [(theta, beta, g_proj)], np.zeros(joints)

        belief = GaussianBelief.point(theta, beta, camera, FIT_BELIEF_VARIANCE)
        draws = sample_parameters(belief, self.config.nll_samples, self.config.seed)
        variance = aleatoric.variance[index]
        log_density = np.empty(len(draws))
        samples, log_var_grads = [], []
        for s in range(len(draws)):
            residual = self.project(draws.theta[s], draws.beta[s], camera)[index] - observed.xy[visible]
            squared = np.sum(residual ** 2, axis=-1)
            log_density[s] = np.sum(confidence * (-np.log(2.0 * np.pi * variance) - squared / (2.0 * variance)))
            g_proj = np.zeros((joints, 2))
            g_proj[index] = confidence[:, None] * residual / variance[:, None]
            g_log_var = np.zeros(joints)
            g_log_var[index] = confidence * (1.0 - squared / (2.0 * variance))
            samples.append((draws.theta[s], draws.beta[s], g_proj))
            log_var_grads.append(g_log_var)
        weights = softmax(log_density)
        return weights, samples, weights @ np.array(log_var_grads)

    def gradient(self, x) -> np.ndarray:
        """
        Градиент целевой функции: слагаемое данных и след ковариации аналитически,
        общие потери - через generic_gradient
        """
        s = self.layout.slices
        theta, beta, camera, aleatoric = self.unpack(x)
        grad = np.zeros(self.layout.size)
        g_theta = np.zeros_like(theta)
        g_beta = np.zeros(SHAPE_DIM)

        scale = self.weight * self.config.keypoint_weight
        if scale > 0:
            weights, samples, g_log_var = self._keypoint_terms(theta, beta, camera, aleatoric)
            rotation = camera.matrix
            d_rotation = rot6d_jacobian(camera.rotation)[0]
            for w, (theta_s, beta_s, g_proj) in zip(weights, samples):
                joints = self.fk(theta_s, beta_s).joints
                g_proj = scale * w * g_proj
                pulled_theta, pulled_beta = self.jacobian(theta_s, beta_s).pull(camera.s * g_proj @ rotation[:2])
                g_theta += pulled_theta
                g_beta += pulled_beta
                grad[s["log_s"]] += camera.s * np.sum(g_proj * (joints @ rotation.T)[:, :2])
                grad[s["rotation"]] += camera.s * np.einsum('ja,kab,jb->k', g_proj, d_rotation[:, :2], joints)
                grad[s["t"]] += g_proj.sum(axis=0)
            grad[s["log_var"]] += scale * g_log_var

        fk = self.fk(theta, beta)
        jacobian = self.jacobian(theta, beta)
        if self.gt3d is not None and self.config.pair3d_weight > 0:
            g_pair = 2.0 * self.weight * self.config.pair3d_weight * (fk.joints - self.gt3d)
            pulled_theta, pulled_beta = jacobian.pull(g_pair)
            g_theta += pulled_theta
            g_beta += pulled_beta

        generic_theta, generic_beta = generic_gradient(BodyPose(theta), BodyShape(beta), self.assets, self.weights,
                                                       fk, jacobian, self.config.fd_step)
        grad[s["theta"]] = (g_theta + generic_theta).ravel()
        grad[s["beta"]] = g_beta + generic_beta

        observed = self.observed.joint_index
        grad[s["log_var"]][observed] += 2.0 * self.config.cov_trace_weight * aleatoric.variance[observed]
        return grad

    def learning_rates(self) -> np.ndarray:
        s = self.layout.slices
        lr = np.zeros(self.layout.size)
        lr[s["theta"]] = self.config.pose_lr
        lr[s["beta"]] = self.config.shape_lr
        lr[s["log_s"]] = self.config.camera_lr
        lr[s["rotation"]] = self.config.pose_lr
        lr[s["t"]] = self.config.translation_lr
        lr[s["log_var"]] = self.config.variance_lr
        return lr


@dataclass
class _Run:
    x: np.ndarray
    loss: float
    converged: bool
    iterations: int


def _adam(objective: FitObjective, x0: np.ndarray, restart: int) -> _Run:
    """Adam с лучшей найденной точкой; сходимость - изменение лучшей потери за окно"""
    config = objective.config
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    base_lr = objective.learning_rates()

    x = objective.normalize(x0)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_f = x, objective(x)
    history = [best_f]
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        grad = objective.gradient(x)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad ** 2
        m_hat = m / (1.0 - beta1 ** iteration)
        v_hat = v / (1.0 - beta2 ** iteration)
        lr = base_lr * config.lr_decay ** ((iteration - 1) // config.decay_every)
        x = objective.normalize(x - lr * m_hat / (np.sqrt(v_hat) + eps))

        f = objective(x)
        if f < best_f:
            best_x, best_f = x, f
        history.append(best_f)
        if iteration % 50 == 0:
            logger.debug(f"Перезапуск {restart}, итерация {iteration}: потеря {f:.6g}, лучшая {best_f:.6g}")
        if iteration >= config.window:
            change = abs(history[-1] - history[-1 - config.window])
            if change <= config.tolerance * max(1.0, abs(history[-1])):
                converged = True
                break
    return _Run(best_x, best_f, converged, iteration)


def _rotation_candidates() -> List[np.ndarray]:
    """Исходная ориентация и поворот на 180 градусов вокруг x (ось y изображения вниз)"""
    return [np.eye(3), axis_rotation(0, 180.0)]


def initial_camera(observed: Keypoints2D, assets: ModelAssets) -> CameraParams:
    """
    Камера по замкнутому 2D подобию шаблонных суставов торса наблюдениям;
    перебираются обе ориентации, выбирается с меньшей невязкой
    """
    template = forward_kinematics(BodyPose.identity(assets.tree.pose_joint_count), BodyShape(),
                                  assets.tree, assets.basis).joints
    visible = observed.visible
    torso = np.array([name in TORSO_JOINTS for name in observed.names]) & visible
    use = torso if np.sum(torso) >= 3 else visible
    src3d = template[observed.joint_index[use]]
    dst = observed.xy[use]

    best, best_residual = None, np.inf
    for base in _rotation_candidates():
        src = (src3d @ base.T)[:, :2]
        try:
            scale, in_plane, shift = umeyama(src, dst)
        except InvalidInputError:
            continue
        residual = float(np.sum((scale * src @ in_plane.T + shift - dst) ** 2))
        if residual < best_residual:
            rotation = np.eye(3)
            rotation[:2, :2] = in_plane
            best = CameraParams(scale, matrix_to_rot6d(rotation @ base), shift)
            best_residual = residual
    if best is None:
        raise UnderConstrainedError("Ключевые точки вырождены: начальная камера неопределима")
    logger.debug(f"Начальная камера: s = {best.s:.4g}, невязка {best_residual:.4g}")
    return best


def _perturb(objective: FitObjective, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Случайный сдвиг углов Эйлера всех суставов, N(0, sigma) градусов"""
    assets = objective.assets
    s = objective.layout.slices
    theta = x[s["theta"]].reshape(objective.layout.pose_joints, 6)
    angles = pose_euler_angles(rot6d_to_matrix(theta), assets.tree, assets.limits)
    angles = angles + rng.normal(0.0, objective.config.restart_sigma_deg, angles.shape)
    out = np.array(x)
    out[s["theta"]] = pose_from_euler(angles, assets.tree).theta.ravel()
    return out


def laplace_variances(objective: FitObjective, x: np.ndarray) -> np.ndarray:
    """Диагональная аппроксимация Лапласа для theta и beta: 1 / d2L/dx2"""
    config = objective.config
    s = objective.layout.slices
    h = config.laplace_step
    center = objective(x)
    count = s["beta"].stop
    variances = np.empty(count)
    for i in range(count):
        shifted = np.array(x)
        shifted[i] = x[i] + h
        f_plus = objective(shifted)
        shifted[i] = x[i] - h
        f_minus = objective(shifted)
        curvature = (f_plus - 2.0 * center + f_minus) / (h * h)
        variances[i] = 1.0 / curvature if curvature > 0 else config.laplace_max
    return np.clip(variances, config.laplace_min, config.laplace_max)


def _check_observed(observed: Keypoints2D, assets: ModelAssets) -> None:
    if observed.visible_count < MIN_VISIBLE_KEYPOINTS:
        raise UnderConstrainedError(
            f"Нужно не меньше {MIN_VISIBLE_KEYPOINTS} видимых ключевых точек, получено {observed.visible_count}")
    if np.any(observed.joint_index >= assets.tree.joint_count):
        raise InvalidInputError("Ключевая точка ссылается на сустав вне скелета")


def _fit(observed: Keypoints2D, config: FitConfig, assets: ModelAssets, gt3d=None, weight: float = 1.0,
         init_belief: Optional[GaussianBelief] = None, init_aleatoric: Optional[AleatoricModel] = None) -> FitResult:
    _check_observed(observed, assets)
    objective = FitObjective(observed, config, assets, weight, gt3d)
    tree = assets.tree

    if init_belief is None:
        init_belief = GaussianBelief.point(BodyPose.identity(tree.pose_joint_count).theta, np.zeros(SHAPE_DIM),
                                           initial_camera(observed, assets))
    if init_aleatoric is None:
        init_aleatoric = AleatoricModel.constant(config.initial_variance, tree.joint_count)
    start = objective.pack(init_belief, init_aleatoric)

    runs = []
    for restart in range(config.restarts):
        x0 = start if restart == 0 else _perturb(objective, start, np.random.default_rng([config.seed, 1000 + restart]))
        logger.info(f"Перезапуск {restart + 1}/{config.restarts}: начальная потеря {objective(objective.normalize(x0)):.6g}")
        run = _adam(objective, x0, restart)
        logger.info(f"Перезапуск {restart + 1}: потеря {run.loss:.6g}, итераций {run.iterations}, "
                    f"сходимость {'да' if run.converged else 'нет'}")
        runs.append(run)
    chosen = int(np.argmin([run.loss for run in runs]))
    best = runs[chosen]
    if not best.converged:
        logger.warning(f"Подгонка не сошлась за {config.max_iterations} итераций")

    theta, beta, camera, aleatoric = objective.unpack(best.x)
    variances = laplace_variances(objective, best.x)
    theta_size = objective.layout.slices["theta"].stop
    belief = GaussianBelief(theta, beta, camera, variances[:theta_size], variances[theta_size:])
    report = decompose_uncertainty(belief, aleatoric, body_projector(assets.model), config.uncertainty_samples,
                                   config.seed, joints=observed.joint_index, joint_names=observed.names)
    return FitResult(
        belief=belief,
        aleatoric=aleatoric,
        losses=objective.breakdown(best.x),
        report=report,
        converged=best.converged,
        iterations=best.iterations,
        restart=chosen,
        restart_losses=tuple(float(run.loss) for run in runs),
        weight=float(weight),
        seed=int(config.seed),
    )


def fit(observed: Keypoints2D, config: FitConfig, assets: ModelAssets, weight: float = 1.0,
        init_belief: Optional[GaussianBelief] = None, init_aleatoric: Optional[AleatoricModel] = None) -> FitResult:
    """
    Подгонка по 2D ключевым точкам

    Raises:
        UnderConstrainedError: меньше 6 видимых точек
    """
    return _fit(observed, config, assets, None, weight, init_belief, init_aleatoric)


def fit_with_pair3d(observed: Keypoints2D, gt3d, config: FitConfig, assets: ModelAssets, weight: float = 1.0,
                    init_belief: Optional[GaussianBelief] = None,
                    init_aleatoric: Optional[AleatoricModel] = None) -> FitResult:
    """
    Подгонка с парными 3D суставами в системе тела (корень в начале координат)
    """
    return _fit(observed, config, assets, gt3d, weight, init_belief, init_aleatoric)


def evaluate_loss(result: FitResult, observed: Keypoints2D, config: FitConfig, assets: ModelAssets,
                  gt3d=None) -> Dict[str, float]:
    """Повторное вычисление слагаемых потерь в параметрах результата"""
    objective = FitObjective(observed, config, assets, result.weight, gt3d)
    return objective.breakdown(objective.pack(result.belief, result.aleatoric))


def _refine_task(task) -> FitResult:
    sample, observed, config, assets, initial, weight = task
    try:
        return fit(observed, config, assets, weight, initial.belief, initial.aleatoric)
    except BodyFitError as e:
        logger.warning(f"Уточнение образца {sample} не удалось: {e}")
        return replace(initial, weight=weight, error=str(e))
    except Exception as e:
        error = BodyFitError(f"образец {sample}: непредвиденная ошибка {type(e).__name__}: {e}")
        logger.error(str(error), exc_info=True)
        return replace(initial, weight=weight, error=str(error))


def refine_batch(results: Sequence[FitResult], observations: Sequence[Keypoints2D], config: FitConfig,
                 assets: ModelAssets, jobs: Optional[int] = 1, progress: bool = False,
                 names: Optional[Sequence[str]] = None) -> List[FitResult]:
    """
    Уточнение пакета: w_i = 1 + softmax(U_e) умножает только слагаемое данных;
    каждый образец стартует со своего начального результата и его зерна.
    Сбой одного образца не прерывает пакет: результат получает поле error
    """
    if not results:
        raise NoDataError("Пустой пакет для уточнения")
    if len(results) != len(observations):
        raise InvalidInputError(f"Результатов {len(results)}, наблюдений {len(observations)}")
    if names is None:
        names = [str(i) for i in range(len(results))]
    elif len(names) != len(results):
        raise InvalidInputError(f"Результатов {len(results)}, имен образцов {len(names)}")
    weights = refinement_weights([r.report.epistemic_trace for r in results], config.refinement_scale)
    logger.info(f"Веса уточнения: сумма {weights.sum():.6f}, максимум {weights.max():.4f}")
    tasks = [(name, observed, replace(config, restarts=1, seed=result.seed), assets, result, float(w))
             for name, observed, result, w in zip(names, observations, results, weights)]
    return parallel_map(_refine_task, tasks, jobs, progress, desc="Уточнение")


def identify_minorities(traces, percentile: float = 90.0) -> np.ndarray:
    """
    Меньшинства: след эпистемической неопределенности строго больше
    перцентиля корпуса (ранг ближайшего)
    """
    traces = np.asarray(traces, dtype=float).ravel()
    if traces.size == 0:
        raise NoDataError("Пустой корпус")
    if not 0 < percentile < 100:
        raise InvalidArgumentError(f"Перцентиль должен лежать в (0, 100), получено {percentile}")
    required = math.ceil(100.0 / (100.0 - percentile))
    if traces.size < required:
        logger.warning(f"Корпус из {traces.size} образцов мал для перцентиля {percentile} (нужно {required})")
    rank = max(1, math.ceil(round(percentile * traces.size / 100.0, 9)))
    threshold = np.sort(traces)[rank - 1]
    return traces > threshold
