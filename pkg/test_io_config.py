#!/usr/bin/env python3
"""
Тесты загрузки и проверки файлов данных и конфигурации запуска
"""

import copy
import json

import numpy as np
import pytest

from bodyfit.errors import AssetValidationError
from bodyfit.fitter import FitConfig
from bodyfit.io_config import (ASSETS_ENV, DATA_DIR, SCHEMA_DIR, SCHEMA_IDS, asset_to_dict, canonical_json,
                               content_hash, load_and_validate, load_run_config, read_json, resolve_asset,
                               save_asset, validate_data)


def packaged(name):
    return read_json(DATA_DIR / name)


def pointers(error):
    return [pointer for pointer, _ in error.value.issues]


def test_packaged_assets_load(assets):
    assert set(assets.hashes) == {"skeleton", "limits", "anthropometry"}
    for name, digest in assets.hashes.items():
        assert len(digest) == 64
        assert digest == content_hash(packaged(f"{name}.json"))
    assert len(assets.anthropometry.entries) == 20
    assert assets.limits.joint_count == 23


@pytest.mark.parametrize("name, schema_id", [("skeleton.json", "skeleton"), ("limits.json", "limits"),
                                             ("anthropometry.json", "anthropometry")])
def test_canonical_form_is_stable(name, schema_id, assets):
    """Проверка и обратное преобразование дают один и тот же канонический документ"""
    first = asset_to_dict(validate_data(packaged(name), schema_id, tree=assets.tree), assets.tree)
    second = asset_to_dict(validate_data(json.loads(canonical_json(first)), schema_id, tree=assets.tree),
                           assets.tree)
    assert canonical_json(first) == canonical_json(second)
    assert canonical_json(json.loads(canonical_json(first))) == canonical_json(first)


def test_limits_min_above_max_reported_with_pointer(assets):
    data = packaged("limits.json")
    data["limits"]["left_elbow"][0] = [10.0, -10.0]
    data["limits"]["right_knee"][2] = [0.0, "a"]
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "limits", "limits.json", assets.tree)
    assert "/limits/left_elbow/0" in pointers(error)
    assert "/limits/right_knee/2/1" in pointers(error)
    assert "limits.json" in str(error.value)


def test_limits_missing_joint_and_bad_rule(assets):
    data = packaged("limits.json")
    del data["limits"]["neck"]
    data["rules"] = [{"source": {"joint": "left_shoulder", "axis": 0},
                      "target": {"joint": "left_elbow", "axis": 4, "bound": "upper"}, "alpha0": 0.5}]
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "limits", tree=assets.tree)
    found = pointers(error)
    assert "/limits" in found
    assert "/rules/0/target/axis" in found
    assert "/rules/0/target/bound" in found


def test_empty_limit_table_rejected(assets):
    """Пустая таблица не дает нулевых пределов: каждый сустав позы обязан иметь запись"""
    data = packaged("limits.json")
    data["limits"] = {}
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "limits", tree=assets.tree)
    assert pointers(error) == ["/limits"]
    assert "left_elbow" in str(error.value)

    del data["limits"]
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "limits", tree=assets.tree)
    assert pointers(error) == ["/limits"]


def test_anthropometry_requires_twenty_entries(assets):
    data = packaged("anthropometry.json")
    data["entries"] = data["entries"][:19]
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "anthropometry", tree=assets.tree)
    assert pointers(error) == ["/entries"]


def test_format_version_checked(assets):
    data = packaged("anthropometry.json")
    data["format_version"] = "2.0"
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "anthropometry", tree=assets.tree)
    assert pointers(error) == ["/format_version"]
    data["format_version"] = "latest"
    with pytest.raises(AssetValidationError):
        validate_data(data, "anthropometry", tree=assets.tree)


def test_skeleton_errors_collected():
    data = packaged("skeleton.json")
    broken = copy.deepcopy(data)
    broken["joints"][3]["parent"] = "head"
    broken["joints"][5]["shape_basis"] = [0.0] * 9
    broken["capsule_resolution"] = 2
    with pytest.raises(AssetValidationError) as error:
        validate_data(broken, "skeleton")
    assert {"/joints/3/parent", "/joints/5/shape_basis", "/capsule_resolution"} <= set(pointers(error))


def test_root_must_be_object():
    with pytest.raises(AssetValidationError) as error:
        validate_data([1, 2], "points")
    assert pointers(error) == [""]
    with pytest.raises(AssetValidationError):
        validate_data({}, "unknown")


def test_keypoint_file_errors(assets):
    data = {"keypoints": [{"name": "tail", "x": 1.0, "y": 2.0},
                          {"name": "pelvis", "x": 1.0, "y": 2.0, "conf": 1.5},
                          {"name": "head", "y": 2.0}]}
    with pytest.raises(AssetValidationError) as error:
        validate_data(data, "keypoints", tree=assets.tree)
    assert pointers(error) == ["/keypoints/0/name", "/keypoints/1/conf", "/keypoints/2/x"]
    ok = validate_data({"keypoints": [{"name": "head", "x": 1.0, "y": 2.0, "conf": 0.5}]}, "keypoints",
                       tree=assets.tree)
    assert ok.names == ("head",)
    assert ok.joint_index.tolist() == [assets.tree.index("head")]


def test_pose_file_theta_and_euler(assets):
    identity = [[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]] * 23
    theta = validate_data({"theta": identity, "beta": [0.5] + [0.0] * 9}, "pose", tree=assets.tree)
    np.testing.assert_allclose(theta.pose.theta, identity)
    assert theta.shape.beta[0] == 0.5
    euler = validate_data({"euler": {"left_elbow": [-6.4, -24.2, -18.2]}}, "pose", tree=assets.tree)
    assert euler.shape.beta.tolist() == [0.0] * 10
    elbow = assets.tree.index("left_elbow") - 1
    assert not np.allclose(euler.pose.theta[elbow], identity[0])
    with pytest.raises(AssetValidationError) as error:
        validate_data({"euler": {"pelvis": [0.0, 0.0, 0.0]}}, "pose", tree=assets.tree)
    assert pointers(error) == ["/euler/pelvis"]
    with pytest.raises(AssetValidationError):
        validate_data({"beta": [0.0] * 10}, "pose", tree=assets.tree)


def test_matrix_files():
    points = validate_data({"points": [[1, 2], [3, 4], [5, 6]]}, "points")
    assert points.shape == (3, 2)
    with pytest.raises(AssetValidationError) as error:
        validate_data({"K": [[1, 0, 0], [0, 1, 0]]}, "intrinsics")
    assert pointers(error) == ["/K"]


def test_default_run_config():
    config = load_run_config()
    assert config.seed == 0
    assert config.fit == FitConfig()
    assert config.exports.csv_audit and not config.exports.xlsx_summary
    assert config.with_seed(7).fit_config.seed == 7
    assert config.with_seed(None) is config
    assert config.to_dict()["fit"] == FitConfig().to_dict()


def test_run_config_errors_collected(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "format_version": "1.0",
        "assets": {"limits": "missing_limits.json", "muscles": "m.json"},
        "seed": -1,
        "exports": {"png": True, "obj": "yes"},
        "fit": {"learning_rate": 0.1},
    }), encoding="utf-8")
    with pytest.raises(AssetValidationError) as error:
        load_and_validate(path, "run_config")
    assert set(pointers(error)) == {"/assets/limits", "/assets/muscles", "/seed", "/exports/png", "/exports/obj",
                                    "/fit"}


def test_run_config_relative_assets(tmp_path, assets):
    save_asset(tmp_path / "my_limits.json", validate_data(packaged("limits.json"), "limits", tree=assets.tree),
               assets.tree)
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"format_version": "1.0", "assets": {"limits": "my_limits.json"}, "seed": 3}),
                    encoding="utf-8")
    config = load_run_config(path)
    assert config.asset_path("limits") == tmp_path / "my_limits.json"
    assert config.fit_config.seed == 3
    loaded = config.load_assets()
    np.testing.assert_array_equal(loaded.limits.upper, assets.limits.upper)
    assert len(loaded.rules) == len(assets.rules)


def test_asset_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.delenv(ASSETS_ENV, raising=False)
    monkeypatch.delenv("KNOWN_ASSETS", raising=False)
    (tmp_path / "limits.json").write_text("{}", encoding="utf-8")
    assert resolve_asset("limits.json") == DATA_DIR / "limits.json"
    monkeypatch.setenv("KNOWN_ASSETS", str(tmp_path))
    assert resolve_asset("limits.json") == tmp_path / "limits.json"
    monkeypatch.setenv(ASSETS_ENV, str(tmp_path))
    assert resolve_asset("limits.json") == tmp_path / "limits.json"
    assert resolve_asset("skeleton.json") == DATA_DIR / "skeleton.json"


def test_read_json_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_json(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{oops", encoding="utf-8")
    with pytest.raises(AssetValidationError):
        read_json(bad)


def test_save_asset_is_canonical(tmp_path, assets):
    target = save_asset(tmp_path / "skeleton.json", assets.model)
    text = target.read_text(encoding="utf-8")
    assert text.endswith("}\n")
    assert text == canonical_json(json.loads(text))
    assert asset_to_dict(load_and_validate(target, "skeleton")) == asset_to_dict(assets.model)


def test_schema_documents_present():
    for schema_id in SCHEMA_IDS + ("fit_result",):
        schema = json.loads((SCHEMA_DIR / f"{schema_id}.schema.json").read_text(encoding="utf-8"))
        assert schema["$schema"].startswith("http://json-schema.org/")
