#!/usr/bin/env python3
"""
Тесты модели тела: скелет, длины костей, прямая кинематика, капсулы
"""

import logging
from collections import Counter

import numpy as np
import pytest

from bodyfit.body_model import (BodyPose, BodyShape, KinematicTree, ShapeBasis, bone_lengths, build_surface,
                                capsule_mesh, capsule_radii, forward_kinematics, kinematic_jacobian, surface_to_obj)
from bodyfit.errors import ConfigError, InvalidInputError
from bodyfit.rotations import axis_rotation, matrix_to_rot6d, random_rotation


def random_pose(rng, joints=23):
    return BodyPose(np.stack([matrix_to_rot6d(random_rotation(rng)) for _ in range(joints)]))


def test_packaged_skeleton(assets):
    tree = assets.tree
    assert tree.joint_count == 24
    assert tree.bone_count == 23
    assert tree.parent_index[0] == -1
    assert tree.joint_names[tree.geometry_roles["spine"]] == "spine3"


def test_rest_pose_matches_offsets(assets):
    """При единичной позе и beta = 0 суставы - накопленные смещения шаблона"""
    tree = assets.tree
    fk = forward_kinematics(BodyPose.identity(), BodyShape(), tree, assets.basis)
    expected = np.zeros((24, 3))
    for j in range(1, 24):
        expected[j] = expected[tree.parent_index[j]] + tree.rest_offsets[j]
    np.testing.assert_allclose(fk.joints, expected, atol=1e-12)
    np.testing.assert_allclose(fk.joints[0], 0.0)


def test_pose_preserves_bone_lengths(assets):
    rng = np.random.default_rng(11)
    tree = assets.tree
    shape = BodyShape(rng.normal(0, 0.5, 10))
    fk = forward_kinematics(random_pose(rng), shape, tree, assets.basis)
    lengths = bone_lengths(shape, assets.basis).lengths
    measured = np.linalg.norm(fk.joints[1:] - fk.joints[tree.parent_index[1:]], axis=1)
    np.testing.assert_allclose(measured, lengths, atol=1e-12)


def test_root_rotation_rotates_whole_body(assets):
    rng = np.random.default_rng(12)
    pose = random_pose(rng)
    rotation = random_rotation(rng)
    plain = forward_kinematics(pose, BodyShape(), assets.tree, assets.basis)
    rotated = forward_kinematics(pose, BodyShape(), assets.tree, assets.basis, root_rotation=rotation)
    np.testing.assert_allclose(rotated.joints, plain.joints @ rotation.T, atol=1e-12)


def test_elbow_flexion_moves_only_forearm_chain(assets):
    tree = assets.tree
    theta = np.array(BodyPose.identity().theta)
    elbow = tree.index("left_elbow")
    theta[elbow - 1] = matrix_to_rot6d(axis_rotation(1, -90.0))
    bent = forward_kinematics(BodyPose(theta), BodyShape(), tree, assets.basis).joints
    rest = forward_kinematics(BodyPose.identity(), BodyShape(), tree, assets.basis).joints
    moved = np.flatnonzero(np.linalg.norm(bent - rest, axis=1) > 1e-9)
    assert {tree.joint_names[j] for j in moved} == {"left_wrist", "left_hand"}


def test_beta_clamped_to_three(assets, caplog):
    with caplog.at_level(logging.WARNING, logger="bodyfit.body_model"):
        big = bone_lengths(BodyShape(np.full(10, 5.0)), assets.basis)
    edge = bone_lengths(BodyShape(np.full(10, 3.0)), assets.basis)
    assert big.beta_clamped
    assert big.warning
    np.testing.assert_allclose(big.lengths, edge.lengths)
    assert [r.levelno for r in caplog.records if r.name == "bodyfit.body_model"] == [logging.WARNING]


@pytest.mark.parametrize("seed", [0, 1])
def test_kinematic_jacobian_matches_central_differences(assets, seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    shape = BodyShape(rng.normal(0.0, 0.5, 10))
    jacobian = kinematic_jacobian(pose, shape, assets.tree, assets.basis)
    h = 1e-6

    theta = np.array(pose.theta)
    for k, i in [(0, 0), (3, 4), (15, 2), (17, 5)]:
        plus, minus = theta.copy(), theta.copy()
        plus[k, i] += h
        minus[k, i] -= h
        numeric = (forward_kinematics(BodyPose(plus), shape, assets.tree, assets.basis).joints
                   - forward_kinematics(BodyPose(minus), shape, assets.tree, assets.basis).joints) / (2.0 * h)
        np.testing.assert_allclose(jacobian.joints_theta[:, :, k, i], numeric, atol=1e-7)

    beta = np.array(shape.beta)
    for k in range(10):
        plus, minus = beta.copy(), beta.copy()
        plus[k] += h
        minus[k] -= h
        numeric = (forward_kinematics(pose, BodyShape(plus), assets.tree, assets.basis).joints
                   - forward_kinematics(pose, BodyShape(minus), assets.tree, assets.basis).joints) / (2.0 * h)
        np.testing.assert_allclose(jacobian.joints_lengths @ jacobian.lengths_beta[:, k], numeric, atol=1e-7)


def test_bone_length_floor():
    basis = ShapeBasis(np.array([0.5, 0.3]), np.array([[-1.0] + [0.0] * 9, [0.0] * 10]))
    lengths = bone_lengths(BodyShape(np.array([3.0] + [0.0] * 9)), basis)
    assert lengths.lengths[0] == pytest.approx(1e-3)
    assert lengths.clamped.tolist() == [True, False]
    assert lengths.lengths[1] == pytest.approx(0.3)


def test_tree_validation():
    offsets = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(ConfigError):
        KinematicTree([-1, 2, 0], offsets, ["a", "b", "c"], ["xyz"] * 3)
    with pytest.raises(ConfigError):
        KinematicTree([-1, 0, 1], offsets * [[1], [1], [0]], ["a", "b", "c"], ["xyz"] * 3)
    with pytest.raises(ConfigError):
        KinematicTree([-1, 0, 1], offsets, ["a", "b", "b"], ["xyz"] * 3)
    with pytest.raises(ConfigError):
        KinematicTree([-1, 0, 1], offsets, ["a", "b", "c"], ["xyz", "xyz", "abc"])


def test_pose_shape_validation(assets):
    with pytest.raises(InvalidInputError):
        BodyPose(np.zeros((23, 5)))
    with pytest.raises(InvalidInputError):
        BodyShape(np.zeros(9))
    with pytest.raises(InvalidInputError):
        forward_kinematics(BodyPose.identity(22), BodyShape(), assets.tree, assets.basis)


def test_adjacent_bones_share_joint(assets):
    tree = assets.tree
    hip = tree.index("left_hip") - 1
    knee = tree.index("left_knee") - 1
    wrist = tree.index("left_wrist") - 1
    assert (hip, knee) in tree.adjacent_bones
    assert (min(hip, wrist), max(hip, wrist)) not in tree.adjacent_bones


def test_capsule_mesh_is_closed_and_outward():
    vertices, triangles, normals = capsule_mesh([0, 0, 0], [0, 0.4, 0], 0.05, 8)
    assert len(vertices) == 2 * 2 * 8 + 2
    assert len(triangles) == 64
    edges = Counter()
    for a, b, c in triangles:
        for edge in ((a, b), (b, c), (c, a)):
            edges[edge] += 1
    for (a, b), count in edges.items():
        assert count == 1
        assert edges[(b, a)] == 1
    tri = vertices[triangles]
    volume = np.sum(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))) / 6.0
    exact = np.pi * 0.05 ** 2 * 0.4 + 4.0 / 3.0 * np.pi * 0.05 ** 3
    assert 0.6 * exact < volume < exact
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)


def test_capsule_mesh_resolution_rules():
    vertices, _, _ = capsule_mesh([0, 0, 0], [1, 0, 0], 0.1, 3)
    assert len(vertices) == 2 * 1 * 3 + 2
    with pytest.raises(ConfigError):
        capsule_mesh([0, 0, 0], [1, 0, 0], 0.1, 2)


def test_capsule_radii_scale_with_length(assets):
    model = assets.model
    beta = np.zeros(10)
    beta[0] = 1.0
    lengths = bone_lengths(BodyShape(beta), model.basis)
    radii = capsule_radii(model, lengths)
    np.testing.assert_allclose(radii / model.capsules.radii, lengths.lengths / model.basis.base_lengths)


def test_surface_and_obj_export(assets):
    surface = build_surface(BodyPose.identity(), BodyShape(), assets.model)
    assert surface.part_count == 23
    assert set(np.unique(surface.part_id)) == set(range(23))
    text = surface_to_obj(surface)
    lines = text.splitlines()
    assert sum(line.startswith("v ") for line in lines) == len(surface.vertices)
    assert sum(line.startswith("f ") for line in lines) == len(surface.triangles)
    colored = surface_to_obj(surface, np.tile([0.1, 0.2, 0.3], (len(surface.vertices), 1)))
    first = next(line for line in colored.splitlines() if line.startswith("v "))
    assert first.split()[4:] == ["0.1000", "0.2000", "0.3000"]
