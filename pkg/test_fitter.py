#!/usr/bin/env python3
"""
Тесты подгонки: конфигурация, целевая функция, начальная камера, меньшинства
"""

import logging
import time
from dataclasses import replace

import numpy as np
import pytest

import bodyfit.fitter
from bodyfit.body_model import BodyPose, BodyShape, forward_kinematics
from bodyfit.camera import CameraParams, project_weak_perspective
from bodyfit.constraints import AnthropometryTable
from bodyfit.errors import ConfigError, InvalidArgumentError, InvalidInputError, NoDataError, UnderConstrainedError
from bodyfit.evaluation import mpe, pmpe
from bodyfit.fitter import (FitConfig, FitObjective, evaluate_loss, fit, fit_with_pair3d, identify_minorities,
                            initial_camera, pair3d_loss, refine_batch)
from bodyfit.probabilistic import (AleatoricModel, GaussianBelief, Keypoints2D, MIN_KEYPOINT_VARIANCE,
                                   mse_loss)
from bodyfit.rotations import axis_rotation, matrix_to_rot6d
from bodyfit.synthetic import occlude_limbs, synthetic_sample

FAST = dict(max_iterations=2, restarts=1, uncertainty_samples=4)


def rest_observation(assets, camera):
    fk = forward_kinematics(BodyPose.identity(), BodyShape(), assets.tree, assets.basis)
    return Keypoints2D.from_projection(project_weak_perspective(fk.joints, camera), assets.tree)


def front_camera():
    return CameraParams(300.0, matrix_to_rot6d(axis_rotation(0, 180.0)), np.array([256.0, 256.0]))


def test_fit_config_validation():
    with pytest.raises(ConfigError):
        FitConfig(physics_weight=-1.0)
    with pytest.raises(ConfigError):
        FitConfig(keypoint_loss="l1")
    with pytest.raises(ConfigError):
        FitConfig(uncertainty_samples=1)
    with pytest.raises(ConfigError):
        FitConfig(lr_decay=1.5)
    with pytest.raises(ConfigError):
        FitConfig(seed=2 ** 64)
    with pytest.raises(ConfigError):
        FitConfig.from_dict({"keypoint_weight": 1.0, "learning_rate": 0.1})
    config = FitConfig(keypoint_weight=3.0, seed=9)
    assert FitConfig.from_dict(config.to_dict()) == config


def test_identify_minorities_nearest_rank():
    """Строго выше 90-го перцентиля из 10 значений - только наибольшее"""
    traces = np.arange(1.0, 11.0)
    assert identify_minorities(traces).tolist() == [False] * 9 + [True]
    assert identify_minorities(traces, 50.0).sum() == 5
    assert not identify_minorities([2.0, 2.0, 2.0]).any()
    with pytest.raises(NoDataError):
        identify_minorities([])
    with pytest.raises(InvalidArgumentError):
        identify_minorities(traces, 100.0)


def test_pair3d_loss():
    assert pair3d_loss(np.zeros((2, 3)), np.ones((2, 3))) == pytest.approx(6.0)
    with pytest.raises(InvalidInputError):
        pair3d_loss(np.zeros((2, 3)), np.zeros((3, 3)))


def test_initial_camera_recovers_front_view(assets):
    camera = front_camera()
    observed = rest_observation(assets, camera)
    found = initial_camera(observed, assets)
    assert found.s == pytest.approx(300.0, rel=1e-9)
    fk = forward_kinematics(BodyPose.identity(), BodyShape(), assets.tree, assets.basis)
    np.testing.assert_allclose(project_weak_perspective(fk.joints, found), observed.xy, atol=1e-6)


def test_objective_pack_and_breakdown(assets):
    camera = front_camera()
    observed = rest_observation(assets, camera)
    config = FitConfig(**FAST)
    objective = FitObjective(observed, config, assets, weight=1.5)
    belief = GaussianBelief.point(BodyPose.identity().theta, np.zeros(10), camera)
    aleatoric = AleatoricModel.constant(4.0)
    x = objective.pack(belief, aleatoric)
    theta, beta, unpacked_camera, unpacked_aleatoric = objective.unpack(x)
    np.testing.assert_allclose(theta, belief.mean_theta)
    assert unpacked_camera.s == pytest.approx(300.0)
    np.testing.assert_allclose(unpacked_aleatoric.variance, 4.0)

    losses = objective.breakdown(x)
    assert losses["data"] == pytest.approx(1.5 * config.keypoint_weight * losses["keypoint"])
    assert losses["pair3d"] == 0.0
    assert losses["total"] == pytest.approx(losses["data"] + losses["generic"] + losses["cov_trace"])
    assert losses["cov_trace"] == pytest.approx(config.cov_trace_weight * 2.0 * 4.0 * 24)
    assert objective(x) == losses["total"]


def test_objective_mse_keypoint_loss(assets):
    camera = front_camera()
    observed = rest_observation(assets, camera)
    objective = FitObjective(observed, FitConfig(keypoint_loss="mse", **FAST), assets)
    belief = GaussianBelief.point(BodyPose.identity().theta, np.zeros(10), camera)
    losses = objective.breakdown(objective.pack(belief, AleatoricModel.constant(1.0)))
    assert losses["keypoint"] == pytest.approx(0.0, abs=1e-18)


def test_objective_rejects_bad_gt3d(assets):
    observed = rest_observation(assets, front_camera())
    with pytest.raises(InvalidInputError):
        FitObjective(observed, FitConfig(**FAST), assets, gt3d=np.zeros((5, 3)))


def test_too_few_visible_points(assets):
    observed = rest_observation(assets, front_camera())
    confidence = np.zeros(24)
    confidence[:5] = 1.0
    with pytest.raises(UnderConstrainedError):
        fit(observed.with_confidence(confidence), FitConfig(**FAST), assets)


def test_refine_batch_argument_checks(assets):
    with pytest.raises(NoDataError):
        refine_batch([], [], FitConfig(**FAST), assets)


@pytest.mark.slow
def test_fit_is_deterministic(assets):
    sample = synthetic_sample(assets, seed=3)
    config = FitConfig(max_iterations=3, restarts=2, uncertainty_samples=4, seed=5)
    first = fit(sample.keypoints, config, assets)
    second = fit(sample.keypoints, config, assets)
    np.testing.assert_array_equal(first.belief.mean_theta, second.belief.mean_theta)
    assert first.losses == second.losses
    assert len(first.restart_losses) == 2
    assert first.total_loss == pytest.approx(min(first.restart_losses))
    assert first.report.total_trace == pytest.approx(first.report.aleatoric_trace + first.report.epistemic_trace)


@pytest.mark.slow
def test_fit_synthetic_body(assets):
    """Подгонка по точным проекциям уменьшает ошибку репроекции и позы"""
    sample = synthetic_sample(assets, seed=11, spread=0.3)
    config = FitConfig(max_iterations=120, restarts=1, uncertainty_samples=16)
    result = fit(sample.keypoints, config, assets)
    start = initial_camera(sample.keypoints, assets)
    rest = forward_kinematics(BodyPose.identity(), BodyShape(), assets.tree, assets.basis).joints
    fitted = result.joints(assets)
    assert mse_loss(project_weak_perspective(fitted, result.belief.mean_cam), sample.keypoints) \
        < mse_loss(project_weak_perspective(rest, start), sample.keypoints)
    assert pmpe(fitted, sample.joints) <= pmpe(rest, sample.joints)
    assert np.all(result.belief.var_theta <= config.laplace_max)


@pytest.mark.slow
def test_occluded_limb_is_more_uncertain(assets):
    sample = synthetic_sample(assets, seed=12, spread=0.3)
    hidden = occlude_limbs(sample.keypoints, ["left_arm"])
    config = FitConfig(max_iterations=60, restarts=1, uncertainty_samples=32)
    visible_fit = fit(sample.keypoints, config, assets)
    hidden_fit = fit(hidden, config, assets)
    elbow = assets.tree.index("left_elbow") - 1
    assert hidden_fit.belief.var_theta[elbow * 6:(elbow + 1) * 6].sum() \
        >= visible_fit.belief.var_theta[elbow * 6:(elbow + 1) * 6].sum()


@pytest.mark.slow
def test_pair3d_and_single_refinement(assets):
    sample = synthetic_sample(assets, seed=13)
    config = FitConfig(max_iterations=5, restarts=1, uncertainty_samples=4)
    result = fit_with_pair3d(sample.keypoints, sample.joints, config, assets)
    assert result.losses["pair3d"] >= 0.0
    assert result.losses["data"] == pytest.approx(
        config.keypoint_weight * result.losses["keypoint"] + config.pair3d_weight * result.losses["pair3d"])
    refined = refine_batch([result], [sample.keypoints], config, assets)
    assert refined[0].weight == pytest.approx(2.0)


def test_refine_batch_isolates_unexpected_failure(assets, monkeypatch, caplog):
    camera = front_camera()
    config = FitConfig(**FAST)
    good = rest_observation(assets, camera)
    broken = rest_observation(assets, camera)
    initial = fit(good, config, assets)
    original = bodyfit.fitter.fit

    def flaky(observed, *args):
        if observed is broken:
            raise RuntimeError("сбой решателя")
        return original(observed, *args)

    monkeypatch.setattr(bodyfit.fitter, "fit", flaky)
    with caplog.at_level(logging.ERROR, logger="bodyfit.fitter"):
        refined = refine_batch([initial, initial], [good, broken], config, assets, names=["first", "second"])
    assert refined[0].error is None
    assert "second" in refined[1].error
    assert "RuntimeError" in refined[1].error
    assert refined[1].weight == pytest.approx(1.5)
    assert refined[1].belief is initial.belief
    assert any("second" in r.getMessage() for r in caplog.records if r.levelno == logging.ERROR)
    with pytest.raises(InvalidInputError):
        refine_batch([initial], [good], config, assets, names=["a", "b"])


@pytest.mark.slow
def test_ground_truth_start_converges_in_window(assets):
    """Старт в точном оптимуме: сходимость за одно окно без ухода параметров"""
    table = assets.anthropometry
    consistent = AnthropometryTable.from_lengths([e.name for e in table.entries], [e.bones for e in table.entries],
                                                 assets.basis.base_lengths, 1.7)
    exact = replace(assets, anthropometry=consistent)
    camera = front_camera()
    observed = rest_observation(exact, camera)
    truth = GaussianBelief.point(BodyPose.identity().theta, np.zeros(10), camera)
    config = FitConfig(keypoint_loss="mse", restarts=1, uncertainty_samples=4)
    result = fit(observed, config, exact, init_belief=truth,
                 init_aleatoric=AleatoricModel.constant(MIN_KEYPOINT_VARIANCE))
    assert result.converged
    assert result.iterations <= config.window
    rest = forward_kinematics(BodyPose.identity(), BodyShape(), exact.tree, exact.basis).joints
    assert mpe(result.joints(exact), rest) < 1.0
    assert result.belief.mean_cam.s == pytest.approx(camera.s, rel=1e-9)


@pytest.mark.slow
def test_default_fit_within_time_budget(assets):
    sample = synthetic_sample(assets, seed=11)
    start = time.perf_counter()
    result = fit(sample.keypoints, FitConfig(), assets)
    assert time.perf_counter() - start < 60.0
    assert len(result.restart_losses) == 4


@pytest.mark.slow
def test_noiseless_fit_accuracy(assets):
    sample = synthetic_sample(assets, seed=11, spread=0.3)
    result = fit(sample.keypoints, FitConfig(), assets)
    fitted = result.joints(assets)
    rmse = np.sqrt(mse_loss(project_weak_perspective(fitted, result.belief.mean_cam), sample.keypoints))
    assert rmse < 0.5
    assert pmpe(fitted, sample.joints) < 10.0
    assert result.losses["biomechanics"] < 1e-3
    assert result.losses["physics"] == 0.0


@pytest.mark.slow
def test_noisy_fit_accuracy(assets):
    """Шум 2 пикселя: медиана P-MPE по нескольким телам"""
    errors = []
    for seed in (21, 22, 23):
        sample = synthetic_sample(assets, seed=seed, noise_px=2.0, spread=0.3)
        result = fit(sample.keypoints, FitConfig(seed=seed), assets)
        errors.append(pmpe(result.joints(assets), sample.joints))
        assert result.losses["biomechanics"] < 1e-3
    assert np.median(errors) < 30.0


@pytest.mark.slow
def test_refinement_helps_occluded_minority(assets):
    """Корпус из 10 тел, у двух закрыта рука: они получают наибольшие веса и улучшаются"""
    config = FitConfig(max_iterations=60, restarts=1, uncertainty_samples=32)
    samples = [synthetic_sample(assets, seed=30 + i, spread=0.3,
                                occlude=("left_arm",) if i in (2, 7) else ()) for i in range(10)]
    observations = [sample.keypoints for sample in samples]
    initial = [fit(obs, replace(config, seed=i), assets) for i, obs in enumerate(observations)]
    refined = refine_batch(initial, observations, config, assets)

    weights = np.array([result.weight for result in refined])
    assert weights.sum() == pytest.approx(11.0, abs=1e-9)
    assert set(np.argsort(weights)[-2:].tolist()) == {2, 7}

    traces = [result.report.epistemic_trace for result in initial]
    flagged = set(np.flatnonzero(identify_minorities(traces, 80.0)).tolist())
    assert len(flagged & {2, 7}) / 2 >= 0.8

    before = np.mean([pmpe(initial[i].joints(assets), samples[i].joints) for i in flagged])
    after = np.mean([pmpe(refined[i].joints(assets), samples[i].joints) for i in flagged])
    assert after < before

    for result, observed in zip(refined, observations):
        losses = evaluate_loss(result, observed, config, assets)
        assert losses["data"] == pytest.approx(result.weight * config.keypoint_weight * losses["keypoint"])
        assert losses["total"] == pytest.approx(losses["data"] + losses["generic"] + losses["cov_trace"])
        assert losses["total"] == pytest.approx(result.total_loss)


@pytest.mark.slow
def test_pair3d_recovers_depth(assets):
    sample = synthetic_sample(assets, seed=14, spread=0.3)
    config = FitConfig(restarts=1)
    result = fit_with_pair3d(sample.keypoints, sample.joints, config, assets)
    depth = (result.joints(assets) @ sample.camera.matrix.T)[:, 2]
    true_depth = (sample.joints @ sample.camera.matrix.T)[:, 2]
    assert np.mean(np.abs(depth - true_depth)) * 1000.0 < 5.0

    conflicting = sample.joints + np.random.default_rng(14).normal(0.0, 0.05, sample.joints.shape)
    conflicting[0] = sample.joints[0]
    other = fit_with_pair3d(sample.keypoints, conflicting, config, assets)
    assert other.total_loss > result.total_loss
