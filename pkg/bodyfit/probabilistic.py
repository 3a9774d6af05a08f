#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Вероятностная модель: гауссово убеждение о параметрах тела, алеаторная
дисперсия ключевых точек, NLL методом Монте-Карло и разложение неопределенности
на алеаторную и эпистемическую части.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from bodyfit.body_model import (BodyModel, BodyPose, BodyShape, KinematicTree, SHAPE_DIM, forward_kinematics,
                                surface_from_fk)
from bodyfit.camera import CameraParams, project_weak_perspective
from bodyfit.errors import InvalidArgumentError, InvalidInputError, NoDataError

logger = logging.getLogger(__name__)

MIN_KEYPOINT_VARIANCE = 1e-4
MAX_KEYPOINT_VARIANCE = 1e4
POSE_JOINTS = 23

# (theta (23, 6), beta (10,), camera) -> проекции суставов (J, 2)
Projector = Callable[[np.ndarray, np.ndarray, CameraParams], np.ndarray]


@dataclass(frozen=True)
class Keypoints2D:
    """
    Наблюдаемые 2D ключевые точки

    Attributes:
        names: имена суставов
        xy: (J, 2) пиксели
        confidence: (J,) уверенность в [0, 1]
        joint_index: (J,) индексы суставов скелета
    """
    names: Tuple[str, ...]
    xy: np.ndarray
    confidence: np.ndarray
    joint_index: np.ndarray

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float)
        confidence = np.array(self.confidence, dtype=float)
        joint_index = np.array(self.joint_index, dtype=int)
        count = len(self.names)
        if xy.shape != (count, 2) or confidence.shape != (count,) or joint_index.shape != (count,):
            raise InvalidInputError(f"Несогласованные размеры ключевых точек: {count} имен, xy {xy.shape}")
        if not np.all(np.isfinite(xy)):
            raise InvalidInputError("Координаты ключевых точек должны быть конечными")
        if np.any(~np.isfinite(confidence)) or np.any(confidence < 0) or np.any(confidence > 1):
            raise InvalidInputError("Уверенность ключевых точек должна лежать в [0, 1]")
        if len(set(joint_index.tolist())) != count:
            raise InvalidInputError("Ключевые точки повторяют один и тот же сустав")
        for array in (xy, confidence, joint_index):
            array.setflags(write=False)
        object.__setattr__(self, 'names', tuple(self.names))
        object.__setattr__(self, 'xy', xy)
        object.__setattr__(self, 'confidence', confidence)
        object.__setattr__(self, 'joint_index', joint_index)

    @classmethod
    def from_records(cls, records: Sequence[dict], tree: KinematicTree) -> "Keypoints2D":
        """Из списка {"name", "x", "y", "conf"}"""
        names, xy, confidence, index = [], [], [], []
        for record in records:
            name = record["name"]
            try:
                index.append(tree.index(name))
            except (KeyError, ValueError):
                raise InvalidInputError(f"Ключевая точка {name!r} не соответствует суставу скелета") from None
            names.append(name)
            xy.append((record["x"], record["y"]))
            confidence.append(record.get("conf", 1.0))
        return cls(tuple(names), np.reshape(xy, (-1, 2)), np.array(confidence, dtype=float), np.array(index, dtype=int))

    @classmethod
    def from_projection(cls, projected, tree: KinematicTree, confidence=None) -> "Keypoints2D":
        """Все суставы скелета из массива проекций (J, 2)"""
        projected = np.asarray(projected, dtype=float)
        count = len(projected)
        confidence = np.ones(count) if confidence is None else confidence
        return cls(tree.joint_names[:count], projected, confidence, np.arange(count))

    def to_records(self) -> List[dict]:
        return [{"name": n, "x": float(p[0]), "y": float(p[1]), "conf": float(c)}
                for n, p, c in zip(self.names, self.xy, self.confidence)]

    @property
    def visible(self) -> np.ndarray:
        return self.confidence > 0

    @property
    def visible_count(self) -> int:
        return int(np.sum(self.visible))

    def with_confidence(self, confidence) -> "Keypoints2D":
        return replace(self, confidence=np.asarray(confidence, dtype=float))

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class GaussianBelief:
    """
    Диагональное гауссово убеждение о (theta, beta); ковариация камеры нулевая

    Attributes:
        mean_theta: (23, 6)
        mean_beta: (10,)
        mean_cam: параметры камеры
        var_theta: (138,) дисперсии
        var_beta: (10,) дисперсии
    """
    mean_theta: np.ndarray
    mean_beta: np.ndarray
    mean_cam: CameraParams
    var_theta: np.ndarray
    var_beta: np.ndarray

    def __post_init__(self):
        mean_theta = np.array(self.mean_theta, dtype=float)
        mean_beta = np.array(self.mean_beta, dtype=float)
        var_theta = np.array(self.var_theta, dtype=float).ravel()
        var_beta = np.array(self.var_beta, dtype=float).ravel()
        if mean_theta.ndim != 2 or mean_theta.shape[1] != 6 or mean_beta.shape != (SHAPE_DIM,):
            raise InvalidInputError(f"Неверные формы средних: theta {mean_theta.shape}, beta {mean_beta.shape}")
        if var_theta.shape != (mean_theta.size,) or var_beta.shape != (SHAPE_DIM,):
            raise InvalidInputError("Число дисперсий не совпадает с числом параметров")
        if not (np.all(np.isfinite(mean_theta)) and np.all(np.isfinite(mean_beta))):
            raise InvalidInputError("Средние убеждения должны быть конечными")
        if not (np.all(var_theta > 0) and np.all(var_beta > 0)) or not np.all(np.isfinite(var_theta)) \
                or not np.all(np.isfinite(var_beta)):
            raise InvalidInputError("Дисперсии убеждения должны быть положительными и конечными")
        for array in (mean_theta, mean_beta, var_theta, var_beta):
            array.setflags(write=False)
        object.__setattr__(self, 'mean_theta', mean_theta)
        object.__setattr__(self, 'mean_beta', mean_beta)
        object.__setattr__(self, 'var_theta', var_theta)
        object.__setattr__(self, 'var_beta', var_beta)

    @classmethod
    def point(cls, theta, beta, camera: CameraParams, variance: float = 1e-12) -> "GaussianBelief":
        """Убеждение, сосредоточенное в точке"""
        theta = np.asarray(theta, dtype=float)
        return cls(theta, beta, camera, np.full(theta.size, variance), np.full(SHAPE_DIM, variance))

    @property
    def pose(self) -> BodyPose:
        return BodyPose(self.mean_theta)

    @property
    def shape(self) -> BodyShape:
        return BodyShape(self.mean_beta)

    def to_dict(self) -> dict:
        return {
            "mean_theta": self.mean_theta.tolist(),
            "mean_beta": self.mean_beta.tolist(),
            "mean_cam": self.mean_cam.to_dict(),
            "var_theta": self.var_theta.tolist(),
            "var_beta": self.var_beta.tolist(),
        }


@dataclass(frozen=True)
class AleatoricModel:
    """Изотропная 2D дисперсия каждой ключевой точки через логарифм, пиксели^2"""
    log_variance: np.ndarray

    def __post_init__(self):
        log_variance = np.array(self.log_variance, dtype=float).ravel()
        if not np.all(np.isfinite(log_variance)):
            raise InvalidInputError("Логарифмы дисперсий должны быть конечными")
        log_variance.setflags(write=False)
        object.__setattr__(self, 'log_variance', log_variance)

    @classmethod
    def constant(cls, variance: float, joints: int = POSE_JOINTS + 1) -> "AleatoricModel":
        return cls(np.full(joints, np.log(variance)))

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.exp(self.log_variance), MIN_KEYPOINT_VARIANCE, MAX_KEYPOINT_VARIANCE)

    def trace(self, joints=None) -> float:
        """След ковариации 2J x 2J: 2 * sum sigma_j^2"""
        variance = self.variance if joints is None else self.variance[np.asarray(joints, dtype=int)]
        return float(2.0 * np.sum(variance))

    def to_dict(self) -> dict:
        return {"log_variance": self.log_variance.tolist(), "variance": self.variance.tolist()}


@dataclass(frozen=True)
class ParameterSamples:
    """S выборок параметров; камера берется равной среднему"""
    theta: np.ndarray
    beta: np.ndarray
    camera: CameraParams

    def __len__(self) -> int:
        return len(self.theta)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Отдельный поток случайных чисел для пары (seed, номер)"""
    return np.random.default_rng([int(seed), int(index)])


def sample_parameters(belief: GaussianBelief, samples: int, seed: int = 0) -> ParameterSamples:
    """
    Репараметризация: Y = mu + L * sigma, sigma ~ N(0, I), L = sqrt(diag)

    Поток шума выборки s зависит только от (seed, s).
    """
    if int(samples) < 1:
        raise InvalidArgumentError(f"Число выборок должно быть не меньше 1, получено {samples}")
    theta_dim = belief.var_theta.size
    noise = np.stack([sample_rng(seed, s).standard_normal(theta_dim + SHAPE_DIM) for s in range(int(samples))])
    std = np.sqrt(np.concatenate([belief.var_theta, belief.var_beta]))
    mean = np.concatenate([belief.mean_theta.ravel(), belief.mean_beta])
    values = mean + noise * std
    theta = values[:, :theta_dim].reshape((-1,) + belief.mean_theta.shape)
    return ParameterSamples(theta, values[:, theta_dim:], belief.mean_cam)


def body_projector(model: BodyModel) -> Projector:
    """Проекция суставов: прямая кинематика + слабая перспектива"""
    def project(theta, beta, camera):
        fk = forward_kinematics(BodyPose(theta), BodyShape(beta), model.tree, model.basis)
        return project_weak_perspective(fk.joints, camera)
    return project


def _project_samples(draws: ParameterSamples, projector: Projector) -> np.ndarray:
    return np.stack([projector(draws.theta[s], draws.beta[s], draws.camera) for s in range(len(draws))])


def keypoint_log_density(projected, observed: Keypoints2D, aleatoric: AleatoricModel) -> float:
    """
    Взвешенная уверенностью лог-плотность наблюдений при данной проекции

    Args:
        projected: (J_model, 2) проекции всех суставов
    """
    visible = observed.visible
    index = observed.joint_index[visible]
    residual = np.asarray(projected, dtype=float)[index] - observed.xy[visible]
    variance = aleatoric.variance[index]
    per_point = -np.log(2.0 * np.pi * variance) - np.sum(residual ** 2, axis=-1) / (2.0 * variance)
    return float(np.sum(observed.confidence[visible] * per_point))


def nll_loss(belief: GaussianBelief, aleatoric: AleatoricModel, observed: Keypoints2D, projector: Projector,
             samples: int = 1, seed: int = 0) -> float:
    """
    -log (1/S) sum_s p(p_obs | Y_s, C)

    Точки с нулевой уверенностью не учитываются, прочие взвешиваются уверенностью.
    Среднее по выборкам считается через logsumexp.

    Raises:
        NoDataError: нет ни одной видимой точки
    """
    if observed.visible_count == 0:
        raise NoDataError("Нет видимых ключевых точек")
    if len(aleatoric.log_variance) <= int(np.max(observed.joint_index)):
        raise InvalidInputError("Алеаторная модель задана не для всех суставов")
    draws = sample_parameters(belief, samples, seed)
    log_density = np.array([keypoint_log_density(projector(draws.theta[s], draws.beta[s], draws.camera),
                                                 observed, aleatoric) for s in range(len(draws))])
    return float(-(logsumexp(log_density) - np.log(len(draws))))


def mse_loss(projected, observed: Keypoints2D) -> float:
    """Взвешенная уверенностью средняя квадратичная ошибка репроекции, пиксели^2"""
    if observed.visible_count == 0:
        raise NoDataError("Нет видимых ключевых точек")
    visible = observed.visible
    residual = np.asarray(projected, dtype=float)[observed.joint_index[visible]] - observed.xy[visible]
    weights = observed.confidence[visible]
    return float(np.sum(weights * np.sum(residual ** 2, axis=-1)) / np.sum(weights))


@dataclass(frozen=True)
class VertexUncertainty:
    """Эпистемическая неопределенность вершин: след ковариации (м^2) и нормированные значения"""
    values: np.ndarray
    normalized: np.ndarray

    def colors(self, cmap: str = "viridis") -> np.ndarray:
        """RGB цвета вершин из стандартной цветовой карты"""
        from matplotlib import colormaps
        return colormaps[cmap](self.normalized)[:, :3]


@dataclass(frozen=True)
class UncertaintyReport:
    """
    Разложение полной неопределенности проекций ключевых точек

    Attributes:
        aleatoric_trace, epistemic_trace, total_trace: пиксели^2
        keypoint_blocks: (J, 2, 2) эпистемические блоки по точкам
        aleatoric_variance: (J,) алеаторная дисперсия по точкам
        joint_names: имена точек
        samples: число выборок
        seed: зерно
    """
    aleatoric_trace: float
    epistemic_trace: float
    total_trace: float
    keypoint_blocks: np.ndarray
    aleatoric_variance: np.ndarray
    joint_names: Tuple[str, ...] = ()
    samples: int = 0
    seed: int = 0
    vertex: Optional[VertexUncertainty] = None

    @property
    def total_blocks(self) -> np.ndarray:
        return self.keypoint_blocks + self.aleatoric_variance[:, None, None] * np.eye(2)

    def to_dict(self) -> dict:
        data = {
            "aleatoric_trace": self.aleatoric_trace,
            "epistemic_trace": self.epistemic_trace,
            "total_trace": self.total_trace,
            "samples": self.samples,
            "seed": self.seed,
            "keypoints": [
                {"name": name, "epistemic": block.tolist(), "aleatoric_variance": float(var)}
                for name, block, var in zip(self.joint_names, self.keypoint_blocks, self.aleatoric_variance)
            ],
        }
        if self.vertex is not None:
            data["vertex_normalized"] = self.vertex.normalized.tolist()
        return data


def decompose_uncertainty(belief: GaussianBelief, aleatoric: AleatoricModel, projector: Projector,
                          samples: int, seed: int = 0, joints: Optional[Sequence[int]] = None,
                          joint_names: Sequence[str] = ()) -> UncertaintyReport:
    """
    Полная = алеаторная + эпистемическая.

    Алеаторная часть - след предсказанной ковариации (точно), эпистемическая -
    след несмещенной выборочной ковариации S проекций средних.

    Args:
        joints: индексы учитываемых суставов (по умолчанию все)

    Raises:
        InvalidArgumentError: S < 2
    """
    if int(samples) < 2:
        raise InvalidArgumentError(f"Для выборочной ковариации нужно не меньше 2 выборок, получено {samples}")
    draws = sample_parameters(belief, samples, seed)
    projected = _project_samples(draws, projector)
    if joints is None:
        joints = np.arange(projected.shape[1])
    joints = np.asarray(joints, dtype=int)
    projected = projected[:, joints]

    centered = projected - projected.mean(axis=0)
    blocks = np.einsum('sja,sjb->jab', centered, centered) / (len(draws) - 1)
    epistemic = float(np.trace(blocks, axis1=1, axis2=2).sum())
    aleatoric_trace = aleatoric.trace(joints)
    names = tuple(joint_names) if joint_names else tuple(str(j) for j in joints)
    logger.debug(f"Неопределенность: алеаторная {aleatoric_trace:.4g}, эпистемическая {epistemic:.4g} пикс^2")
    return UncertaintyReport(aleatoric_trace, epistemic, aleatoric_trace + epistemic, blocks,
                             aleatoric.variance[joints], names, int(samples), int(seed))


def vertex_epistemic_uncertainty(belief: GaussianBelief, model: BodyModel, samples: int,
                                 seed: int = 0) -> VertexUncertainty:
    """
    След 3x3 выборочной ковариации каждой вершины поверхности по S выборкам;
    нормированная копия приводится к [0, 1] (все нули, если разброс пренебрежимо мал)
    """
    if int(samples) < 2:
        raise InvalidArgumentError(f"Для выборочной ковариации нужно не меньше 2 выборок, получено {samples}")
    draws = sample_parameters(belief, samples, seed)
    vertices = []
    for s in range(len(draws)):
        fk = forward_kinematics(BodyPose(draws.theta[s]), BodyShape(draws.beta[s]), model.tree, model.basis)
        vertices.append(surface_from_fk(fk, model).vertices)
    vertices = np.stack(vertices)
    values = np.var(vertices, axis=0, ddof=1).sum(axis=-1)
    spread = float(values.max() - values.min())
    if spread <= 1e-15 * max(1.0, float(values.max())):
        normalized = np.zeros_like(values)
    else:
        normalized = (values - values.min()) / spread
    return VertexUncertainty(values, normalized)


def refinement_weights(traces, scale: float = 1.0) -> np.ndarray:
    """w_i = 1 + softmax(scale * U_e)_i"""
    traces = np.asarray(traces, dtype=float).ravel()
    if traces.size == 0:
        raise InvalidArgumentError("Пустой пакет")
    if not np.all(np.isfinite(traces)):
        raise InvalidInputError("Следы эпистемической неопределенности должны быть конечными")
    z = scale * traces
    z = np.exp(z - z.max())
    return 1.0 + z / z.sum()


def covariance_trace_penalty(aleatoric: AleatoricModel, weight: float = 50.0, joints=None) -> float:
    """Регуляризатор следа предсказанной ковариации"""
    return float(weight * aleatoric.trace(joints))
