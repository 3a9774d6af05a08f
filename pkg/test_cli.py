#!/usr/bin/env python3
"""
Тесты командной строки: коды выхода, воспроизводимость файлов результатов
"""

import json

import numpy as np
import pandas as pd
import pytest

import bodyfit.cli
from bodyfit.body_model import BodyPose, BodyShape, forward_kinematics
from bodyfit.camera import CameraParams, project_weak_perspective
from bodyfit.cli import SUMMARY_COLUMNS, main
from bodyfit.rotations import axis_rotation, matrix_to_rot6d
from bodyfit.synthetic import synthetic_sample

K = [[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]]
QUICK_FIT = {"max_iterations": 2, "restarts": 1, "uncertainty_samples": 4}


def write(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def keypoint_records(assets, visible=24):
    camera = CameraParams(300.0, matrix_to_rot6d(axis_rotation(0, 180.0)), np.array([256.0, 256.0]))
    fk = forward_kinematics(BodyPose.identity(), BodyShape(), assets.tree, assets.basis)
    xy = project_weak_perspective(fk.joints, camera)
    return {"keypoints": [{"name": name, "x": float(p[0]), "y": float(p[1]), "conf": 1.0}
                          for name, p in list(zip(assets.tree.joint_names, xy))[:visible]]}


def depth_inputs(tmp_path):
    truth = np.array([[0.0, 0.0, 2.0], [0.1, 0.0, 2.05], [0.2, 0.0, 2.1]])
    homogeneous = truth @ np.array(K).T
    pixels = homogeneous[:, :2] / homogeneous[:, 2:]
    points = write(tmp_path / "points.json", {"points": pixels.tolist()})
    intrinsics = write(tmp_path / "K.json", {"K": K})
    d12 = float(np.linalg.norm(truth[1] - truth[0]))
    return truth, points, intrinsics, d12


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    assert "depth-solve" in capsys.readouterr().out
    assert main(["--version"]) == 0


def test_bad_flags_exit_with_user_error(capsys):
    assert main(["fit", "--keypoints", "k.json", "--out", "o.json", "--unknown"]) == 1
    assert main(["fit", "--keypoints", "k.json"]) == 1
    assert main([]) == 1
    assert main(["depth-solve", "--points", "p.json", "--intrinsics", "k.json", "--d12", "x", "--d13", "1"]) == 1
    assert "ошибка" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert main(["fit", "--keypoints", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o.json")]) == 1


def test_depth_solve_output_is_reproducible(tmp_path, capsys):
    truth, points, intrinsics, d12 = depth_inputs(tmp_path)
    args = ["depth-solve", "--points", points, "--intrinsics", intrinsics, "--d12", repr(d12),
            "--d13", repr(2.0 * d12)]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
    first = (tmp_path / "a.json").read_bytes()
    assert first == (tmp_path / "b.json").read_bytes()
    document = json.loads(first)
    np.testing.assert_allclose(document["points3d"], truth, atol=1e-6)
    assert document["reprojection_error_px"] < 1e-6
    assert "P1:" in capsys.readouterr().out


def test_depth_solve_without_solution(tmp_path, capsys):
    points = write(tmp_path / "points.json", {"points": [[10.0, 10.0], [10.0, 10.0], [20.0, 20.0]]})
    intrinsics = write(tmp_path / "K.json", {"K": K})
    assert main(["depth-solve", "--points", points, "--intrinsics", intrinsics, "--d12", "0.1",
                 "--d13", "0.2"]) == 1
    assert "no-solution" in capsys.readouterr().err


def test_invalid_asset_reported(tmp_path, capsys):
    points = write(tmp_path / "points.json", {"points": [[1.0, 2.0], [3.0, "x"], [5.0, 6.0]]})
    intrinsics = write(tmp_path / "K.json", {"K": K})
    assert main(["depth-solve", "--points", points, "--intrinsics", intrinsics, "--d12", "0.1",
                 "--d13", "0.2"]) == 1
    assert "/points/1/1" in capsys.readouterr().err


def test_audit_single_pose(tmp_path, capsys):
    pose = write(tmp_path / "pose.json", {"euler": {"left_elbow": [-6.4, -24.2, -18.2]}})
    assert main(["audit", "--pose", pose, "--out", str(tmp_path / "a.json")]) == 0
    assert main(["audit", "--pose", pose, "--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    document = json.loads((tmp_path / "a.json").read_text(encoding="utf-8"))
    assert document["command"] == "audit"
    assert set(document["asset_hashes"]) == {"skeleton", "limits", "anthropometry"}
    elbow = [v for v in document["audit"]["violations"] if v["joint"] == "left_elbow" and v["kind"] == "static"]
    assert elbow[0]["magnitude_deg"] == pytest.approx(18.2)
    assert "left_elbow" in capsys.readouterr().out


def test_audit_corpus(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    write(corpus / "a.json", {"euler": {}})
    write(corpus / "b.json", {"euler": {"left_knee": [30.0, 0.0, 0.0]}})
    out = tmp_path / "audit.csv"
    assert main(["audit", "--corpus", str(corpus), "--out", str(out), "--jobs", "1"]) == 0
    frame = pd.read_csv(out)
    assert frame["sample"].tolist() == ["a", "b", "summary"]
    assert out.read_bytes().endswith(b"\n")


def test_audit_corpus_keeps_failed_samples(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    write(corpus / "a.json", {"euler": {"left_knee": [30.0, 0.0, 0.0]}})
    write(corpus / "b.json", {"euler": {"pelvis": [0.0, 0.0, 0.0]}})
    (corpus / "c.json").write_text("{oops", encoding="utf-8")
    out = tmp_path / "audit.csv"
    assert main(["audit", "--corpus", str(corpus), "--out", str(out), "--jobs", "1"]) == 0
    frame = pd.read_csv(out, keep_default_na=False, na_values=[""])
    assert frame["sample"].tolist() == ["a", "b", "c", "summary"]
    assert pd.isna(frame["error"].iloc[0])
    assert frame["error"].iloc[1:3].notna().all()
    assert frame["error"].iloc[3] == "ошибок: 2"
    assert frame["penetration_percentage"].iloc[3] == pytest.approx(0.0)
    assert "с ошибкой: 2" in capsys.readouterr().out


def test_refine_empty_directory(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["refine", "--batch", str(empty), "--out", str(tmp_path / "out")]) == 1
    assert main(["refine", "--batch", str(tmp_path / "absent"), "--out", str(tmp_path / "out")]) == 1


def test_fit_with_too_few_keypoints(tmp_path, assets):
    keypoints = write(tmp_path / "k.json", keypoint_records(assets, visible=5))
    assert main(["fit", "--keypoints", keypoints, "--out", str(tmp_path / "o.json")]) == 1
    assert not (tmp_path / "o.json").exists()


def test_bad_seed_is_user_error(tmp_path, assets):
    keypoints = write(tmp_path / "k.json", keypoint_records(assets))
    assert main(["fit", "--keypoints", keypoints, "--out", str(tmp_path / "o.json"), "--seed", "-1"]) == 1


@pytest.mark.slow
def test_fit_output_is_reproducible(tmp_path, assets):
    config = write(tmp_path / "run.json", {"format_version": "1.0", "seed": 4, "fit": QUICK_FIT,
                                           "exports": {"vertex_uncertainty": True}})
    keypoints = write(tmp_path / "k.json", keypoint_records(assets))
    for name in ("a", "b"):
        assert main(["fit", "--config", config, "--keypoints", keypoints, "--out", str(tmp_path / f"{name}.json"),
                     "--obj", str(tmp_path / f"{name}.obj")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()
    document = json.loads((tmp_path / "a.json").read_text(encoding="utf-8"))
    assert document["config"]["seed"] == 4
    assert document["config"]["fit"]["seed"] == 4
    assert len(document["result"]["joints3d"]) == 24
    assert min(document["vertex_uncertainty"]) == 0.0


@pytest.mark.slow
def test_refine_single_sample(tmp_path, assets):
    batch = tmp_path / "batch"
    batch.mkdir()
    write(batch / "only.json", keypoint_records(assets))
    config = write(tmp_path / "run.json", {"format_version": "1.0", "fit": QUICK_FIT})
    out = tmp_path / "out"
    assert main(["refine", "--config", config, "--batch", str(batch), "--out", str(out), "--jobs", "1"]) == 0
    frame = pd.read_csv(out / "summary.csv")
    assert list(frame.columns) == SUMMARY_COLUMNS
    assert frame["weight"].tolist() == [2.0]
    assert not frame["minority"].iloc[0]
    document = json.loads((out / "only.result.json").read_text(encoding="utf-8"))
    assert document["refinement"]["weight"] == 2.0


def write_batch(directory, assets, count=10, occluded=(2, 7)):
    directory.mkdir()
    for i in range(count):
        sample = synthetic_sample(assets, seed=40 + i, occlude=("left_arm",) if i in occluded else ())
        write(directory / f"s{i:02d}.json", {"keypoints": sample.keypoints.to_records()})


@pytest.mark.slow
def test_refine_output_independent_of_jobs(tmp_path, assets, capsys):
    batch = tmp_path / "batch"
    write_batch(batch, assets)
    config = write(tmp_path / "run.json", {"format_version": "1.0", "seed": 3, "fit": QUICK_FIT})
    for jobs in ("1", "4"):
        assert main(["refine", "--config", config, "--batch", str(batch), "--out", str(tmp_path / f"out{jobs}"),
                     "--jobs", jobs]) == 0
    single, pooled = tmp_path / "out1", tmp_path / "out4"
    names = sorted(path.name for path in single.iterdir())
    assert names == sorted(path.name for path in pooled.iterdir())
    assert len(names) == 11
    for name in names:
        assert (single / name).read_bytes() == (pooled / name).read_bytes(), name
    frame = pd.read_csv(single / "summary.csv")
    assert frame["weight"].sum() == pytest.approx(11.0, abs=1e-9)
    assert "Сумма весов: 11" in capsys.readouterr().out


@pytest.mark.slow
def test_refine_continues_after_unexpected_failure(tmp_path, assets, monkeypatch):
    batch = tmp_path / "batch"
    batch.mkdir()
    write(batch / "a.json", keypoint_records(assets))
    write(batch / "b.json", keypoint_records(assets))
    config = write(tmp_path / "run.json", {"format_version": "1.0", "fit": QUICK_FIT})
    original = bodyfit.cli.fit
    calls = []

    def flaky(*args):
        calls.append(args)
        if len(calls) == 1:
            raise RuntimeError("сбой решателя")
        return original(*args)

    monkeypatch.setattr(bodyfit.cli, "fit", flaky)
    out = tmp_path / "out"
    assert main(["refine", "--config", config, "--batch", str(batch), "--out", str(out), "--jobs", "1"]) == 0
    frame = pd.read_csv(out / "summary.csv")
    assert frame["sample"].tolist() == ["a", "b"]
    assert "образец a" in frame["error"].iloc[0]
    assert "RuntimeError" in frame["error"].iloc[0]
    assert frame["weight"].iloc[1] == 2.0
    assert not (out / "a.result.json").exists()
