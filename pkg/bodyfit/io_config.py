#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Загрузка и проверка внешних данных: скелет и базис формы, пределы суставов
с правилами зависимостей, антропометрия, ключевые точки, позы и конфигурация запуска.

Проверка полная: объект создается только если в файле нет ни одной ошибки,
иначе выбрасывается AssetValidationError со списком (json-pointer, сообщение).
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from packaging.specifiers import SpecifierSet
from packaging.version import InvalidVersion, Version

from bodyfit.body_model import (BodyModel, BodyPose, BodyShape, CapsuleParams, GEOMETRY_ROLES, KinematicTree,
                                SHAPE_DIM, ShapeBasis)
from bodyfit.constraints import (ANTHROPOMETRY_ENTRIES, AngleLimits, AnthropometryEntry, AnthropometryTable,
                                 DependencyRule, ModelAssets, pose_from_euler)
from bodyfit.errors import AssetValidationError, BodyFitError
from bodyfit.fitter import FitConfig
from bodyfit.probabilistic import Keypoints2D
from bodyfit.rotations import EULER_ORDERS

logger = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).parent
DATA_DIR = PACKAGE_DIR / "data"
SCHEMA_DIR = PACKAGE_DIR / "schemas"
ASSETS_ENV = "BODYFIT_ASSETS"
ASSETS_ENV_NAMES = (ASSETS_ENV, "KNOWN_ASSETS")
FORMAT_VERSION = "1.0"
SUPPORTED_FORMATS = SpecifierSet(">=1.0,<2.0")
ASSET_FILES = {"skeleton": "skeleton.json", "limits": "limits.json", "anthropometry": "anthropometry.json"}
SCHEMA_IDS = ("skeleton", "limits", "anthropometry", "keypoints", "pose", "points", "intrinsics", "joints3d",
              "run_config")
EXPORT_KEYS = ("obj", "vertex_uncertainty", "csv_audit", "xlsx_summary")
BOUNDS = ("min", "max")


def canonical_json(data: Any) -> str:
    """Каноническая форма: отсортированные ключи, отступ 2, перевод строки в конце"""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def content_hash(data: Any) -> str:
    """SHA-256 канонической формы"""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Файл не найден: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise AssetValidationError(str(path), [("", f"некорректный JSON: {e.msg} (строка {e.lineno})")]) from None


def _pointer(*parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


class _Checker:
    """Собирает ошибки проверки вместо выброса на первой"""

    def __init__(self):
        self.issues: List[Tuple[str, str]] = []

    def add(self, pointer: str, message: str) -> None:
        self.issues.append((pointer, message))

    def get(self, obj: dict, key: str, pointer: str, kind, required: bool = True, default=None):
        if not isinstance(obj, dict):
            self.add(pointer, "ожидался объект")
            return default
        if key not in obj:
            if required:
                self.add(_pointer_join(pointer, key), "обязательное поле отсутствует")
            return default
        value = obj[key]
        if kind is float:
            return self.number(value, _pointer_join(pointer, key), default)
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            self.add(_pointer_join(pointer, key), "ожидалось целое число")
            return default
        if kind not in (float, int) and not isinstance(value, kind):
            self.add(_pointer_join(pointer, key), f"неверный тип: {type(value).__name__}")
            return default
        return value

    def number(self, value, pointer: str, default=None) -> Optional[float]:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.add(pointer, "ожидалось конечное число")
            return default
        return float(value)

    def vector(self, value, pointer: str, length: int) -> Optional[np.ndarray]:
        if not isinstance(value, list) or len(value) != length:
            self.add(pointer, f"ожидался массив из {length} чисел")
            return None
        numbers = [self.number(v, _pointer_join(pointer, i)) for i, v in enumerate(value)]
        if any(n is None for n in numbers):
            return None
        return np.array(numbers)

    def format_version(self, data: dict) -> None:
        raw = self.get(data, "format_version", "", str)
        if raw is None:
            return
        try:
            if Version(raw) not in SUPPORTED_FORMATS:
                self.add("/format_version", f"версия {raw} не поддерживается ({SUPPORTED_FORMATS})")
        except InvalidVersion:
            self.add("/format_version", f"некорректная версия: {raw!r}")

    def raise_if_any(self, source: str) -> None:
        if self.issues:
            raise AssetValidationError(source, self.issues)


def _pointer_join(pointer: str, key) -> str:
    return pointer + _pointer(key)


# --- скелет ---

def _check_skeleton(data: dict, checker: _Checker) -> Optional[BodyModel]:
    checker.format_version(data)
    joints = checker.get(data, "joints", "", list, default=[])
    resolution = checker.get(data, "capsule_resolution", "", int, required=False, default=8)
    if resolution is not None and resolution < 3:
        checker.add("/capsule_resolution", "должно быть не меньше 3")
    height = checker.get(data, "template_height", "", float, required=False, default=1.70)
    if height is not None and height <= 0:
        checker.add("/template_height", "должен быть положителен")
    if not joints:
        checker.add("/joints", "скелет не содержит суставов")
        return None

    names, parents, offsets, orders, radii, basis = [], [], [], [], [], []
    for i, joint in enumerate(joints):
        base = _pointer("joints", i)
        name = checker.get(joint, "name", base, str)
        if name in names:
            checker.add(base + "/name", f"повтор имени {name}")
        parent = joint.get("parent") if isinstance(joint, dict) else None
        if i == 0:
            if parent is not None:
                checker.add(base + "/parent", "первый сустав должен быть корнем (parent = null)")
            parents.append(-1)
        elif parent not in names:
            checker.add(base + "/parent", f"родитель {parent!r} должен быть определен раньше")
            parents.append(0)
        else:
            parents.append(names.index(parent))
        names.append(name)
        offset = checker.vector(joint.get("offset") if isinstance(joint, dict) else None, base + "/offset", 3)
        if offset is not None and i > 0 and np.linalg.norm(offset) <= 0:
            checker.add(base + "/offset", "нулевое смещение сустава")
        offsets.append(offset if offset is not None else np.zeros(3))
        order = checker.get(joint, "rotation_order", base, str, default="xyz")
        if order not in EULER_ORDERS:
            checker.add(base + "/rotation_order", f"порядок должен быть одним из {EULER_ORDERS}")
        orders.append(order)
        if i > 0:
            radius = checker.get(joint, "capsule_radius", base, float, default=1.0)
            if radius is not None and radius <= 0:
                checker.add(base + "/capsule_radius", "радиус должен быть положителен")
            radii.append(radius if radius is not None else 1.0)
            row = checker.vector(joint.get("shape_basis") if isinstance(joint, dict) else None,
                                 base + "/shape_basis", SHAPE_DIM)
            basis.append(row if row is not None else np.zeros(SHAPE_DIM))

    roles = checker.get(data, "geometry_roles", "", dict, default={})
    role_index = {}
    if roles:
        if set(roles) != set(GEOMETRY_ROLES):
            checker.add("/geometry_roles", f"роли должны быть ровно {sorted(GEOMETRY_ROLES)}")
        for role, joint_name in roles.items():
            if joint_name not in names:
                checker.add(_pointer("geometry_roles", role), f"неизвестный сустав {joint_name!r}")
            else:
                role_index[role] = names.index(joint_name)
        if len(set(role_index.values())) != len(role_index):
            checker.add("/geometry_roles", "роли должны ссылаться на разные суставы")

    if checker.issues:
        return None
    try:
        tree = KinematicTree(parents, np.stack(offsets), names, orders, role_index, height)
        base_lengths = np.linalg.norm(np.stack(offsets)[1:], axis=1)
        return BodyModel(tree, ShapeBasis(base_lengths, np.stack(basis)), CapsuleParams(radii, resolution))
    except BodyFitError as e:
        checker.add("", str(e))
        return None


def skeleton_to_dict(model: BodyModel) -> dict:
    tree = model.tree
    joints = []
    for j, name in enumerate(tree.joint_names):
        entry = {
            "name": name,
            "parent": None if j == 0 else tree.joint_names[tree.parent_index[j]],
            "offset": [float(v) for v in tree.rest_offsets[j]],
            "rotation_order": tree.rotation_order[j],
        }
        if j > 0:
            entry["capsule_radius"] = float(model.capsules.radii[j - 1])
            entry["shape_basis"] = [float(v) for v in model.basis.basis[j - 1]]
        joints.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "capsule_resolution": model.capsules.resolution,
        "template_height": tree.template_height,
        "geometry_roles": {role: tree.joint_names[j] for role, j in tree.geometry_roles.items()},
        "joints": joints,
    }


# --- пределы и правила ---

@dataclass(frozen=True)
class LimitTable:
    limits: AngleLimits
    rules: Tuple[DependencyRule, ...]


def _pose_joint(name, tree: KinematicTree, pointer: str, checker: _Checker) -> Optional[int]:
    if name not in tree.joint_names or name == tree.joint_names[0]:
        checker.add(pointer, f"неизвестный сустав позы {name!r}")
        return None
    return tree.joint_names.index(name) - 1


def _check_limits(data: dict, checker: _Checker, tree: KinematicTree) -> Optional[LimitTable]:
    checker.format_version(data)
    table = checker.get(data, "limits", "", dict, default={})
    pose_joints = tree.pose_joint_count
    lower = np.zeros((pose_joints, 3))
    upper = np.zeros((pose_joints, 3))
    seen = set()
    for name, boxes in table.items():
        base = _pointer("limits", name)
        joint = _pose_joint(name, tree, base, checker)
        if joint is None:
            continue
        seen.add(joint)
        if not isinstance(boxes, list) or len(boxes) != 3:
            checker.add(base, "ожидалось три пары [min, max]")
            continue
        for axis, box in enumerate(boxes):
            pair = checker.vector(box, _pointer_join(base, axis), 2)
            if pair is None:
                continue
            if pair[0] > pair[1]:
                checker.add(_pointer_join(base, axis), f"min {pair[0]} больше max {pair[1]}")
            lower[joint, axis], upper[joint, axis] = pair
    missing = [tree.joint_names[joint + 1] for joint in range(pose_joints) if joint not in seen]
    if missing and "limits" in data:
        checker.add("/limits", f"нет пределов для суставов: {', '.join(missing)}")

    rules = []
    for i, rule in enumerate(checker.get(data, "rules", "", list, required=False, default=[])):
        base = _pointer("rules", i)
        source = checker.get(rule, "source", base, dict, default={})
        target = checker.get(rule, "target", base, dict, default={})
        source_joint = _pose_joint(source.get("joint"), tree, base + "/source/joint", checker)
        target_joint = _pose_joint(target.get("joint"), tree, base + "/target/joint", checker)
        source_axis = checker.get(source, "axis", base + "/source", int)
        target_axis = checker.get(target, "axis", base + "/target", int)
        for axis, pointer in ((source_axis, "/source/axis"), (target_axis, "/target/axis")):
            if axis is not None and not 0 <= axis < 3:
                checker.add(base + pointer, "номер оси должен быть 0, 1 или 2")
        bound = checker.get(target, "bound", base + "/target", str)
        if bound is not None and bound not in BOUNDS:
            checker.add(base + "/target/bound", "граница должна быть 'min' или 'max'")
        alpha0 = checker.get(rule, "alpha0", base, float)
        use_magnitude = checker.get(rule, "use_magnitude", base, bool, required=False, default=False)
        name = checker.get(rule, "name", base, str, required=False, default=f"rule_{i}")
        if None in (source_joint, target_joint, source_axis, target_axis, bound, alpha0) or bound not in BOUNDS:
            continue
        if (source_joint, source_axis) == (target_joint, target_axis):
            checker.add(base, "источник совпадает с целью")
            continue
        rules.append(DependencyRule(source_joint, source_axis, target_joint, target_axis, bound, alpha0,
                                    bool(use_magnitude), name))
    if checker.issues:
        return None
    return LimitTable(AngleLimits(lower, upper, tree.joint_names[1:]), tuple(rules))


def limits_to_dict(table: LimitTable, tree: KinematicTree) -> dict:
    names = tree.joint_names[1:]
    return {
        "format_version": FORMAT_VERSION,
        "limits": {name: [[float(table.limits.lower[j, a]), float(table.limits.upper[j, a])] for a in range(3)]
                   for j, name in enumerate(names)},
        "rules": [{
            "name": rule.name,
            "source": {"joint": names[rule.source_joint], "axis": rule.source_axis},
            "target": {"joint": names[rule.target_joint], "axis": rule.target_axis, "bound": rule.bound},
            "alpha0": rule.alpha0,
            "use_magnitude": rule.use_magnitude,
        } for rule in table.rules],
    }


# --- антропометрия ---

def _check_anthropometry(data: dict, checker: _Checker, tree: KinematicTree) -> Optional[AnthropometryTable]:
    checker.format_version(data)
    height = checker.get(data, "reference_height", "", float)
    if height is not None and height <= 0:
        checker.add("/reference_height", "рост должен быть положителен")
    entries_raw = checker.get(data, "entries", "", list, default=[])
    if len(entries_raw) != ANTHROPOMETRY_ENTRIES:
        checker.add("/entries", f"требуется ровно {ANTHROPOMETRY_ENTRIES} записей, получено {len(entries_raw)}")
    entries = []
    for i, raw in enumerate(entries_raw):
        base = _pointer("entries", i)
        name = checker.get(raw, "name", base, str, default=f"entry_{i}")
        bones_raw = checker.get(raw, "bones", base, list, default=[])
        if not bones_raw:
            checker.add(base + "/bones", "пустая цепочка костей")
        bones = [_pose_joint(b, tree, _pointer_join(base + "/bones", k), checker) for k, b in enumerate(bones_raw)]
        ratio = checker.get(raw, "ratio", base, float)
        if ratio is not None and not 0 < ratio < 1:
            checker.add(base + "/ratio", "доля роста должна лежать в (0, 1)")
        weight = checker.get(raw, "weight", base, float, required=False, default=1.0)
        if weight is not None and weight < 0:
            checker.add(base + "/weight", "вес должен быть неотрицательным")
        if None not in bones and ratio is not None and weight is not None:
            entries.append(AnthropometryEntry(name, tuple(bones), ratio, weight))
    if checker.issues:
        return None
    return AnthropometryTable(tuple(entries), height)


def anthropometry_to_dict(table: AnthropometryTable, tree: KinematicTree) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "reference_height": table.reference_height,
        "entries": [{"name": e.name, "bones": [tree.joint_names[b + 1] for b in e.bones],
                     "ratio": e.ratio, "weight": e.weight} for e in table.entries],
    }


# --- входные файлы команд ---

def _check_keypoints(data: dict, checker: _Checker, tree: KinematicTree) -> Optional[Keypoints2D]:
    records = checker.get(data, "keypoints", "", list, default=[])
    clean = []
    for i, record in enumerate(records):
        base = _pointer("keypoints", i)
        name = checker.get(record, "name", base, str)
        if name is not None and name not in tree.joint_names:
            checker.add(base + "/name", f"неизвестный сустав {name!r}")
        x = checker.get(record, "x", base, float)
        y = checker.get(record, "y", base, float)
        conf = checker.get(record, "conf", base, float, required=False, default=1.0)
        if conf is not None and not 0 <= conf <= 1:
            checker.add(base + "/conf", "уверенность должна лежать в [0, 1]")
        clean.append({"name": name, "x": x, "y": y, "conf": conf})
    names = [r["name"] for r in clean]
    if len(set(names)) != len(names):
        checker.add("/keypoints", "имена ключевых точек повторяются")
    if checker.issues:
        return None
    return Keypoints2D.from_records(clean, tree)


@dataclass(frozen=True)
class PoseFile:
    """Поза и форма из файла (theta в 6D или углы Эйлера по суставам)"""
    pose: BodyPose
    shape: BodyShape


def _check_pose(data: dict, checker: _Checker, tree: KinematicTree) -> Optional[PoseFile]:
    pose_joints = tree.pose_joint_count
    beta = np.zeros(SHAPE_DIM)
    if isinstance(data, dict) and "beta" in data:
        beta = checker.vector(data["beta"], "/beta", SHAPE_DIM)
    pose = None
    if isinstance(data, dict) and "theta" in data:
        rows = data["theta"]
        if not isinstance(rows, list) or len(rows) != pose_joints:
            checker.add("/theta", f"ожидалось {pose_joints} строк по 6 чисел")
        else:
            theta = [checker.vector(row, _pointer("theta", i), 6) for i, row in enumerate(rows)]
            if all(t is not None for t in theta):
                pose = np.stack(theta)
    elif isinstance(data, dict) and "euler" in data:
        euler = checker.get(data, "euler", "", dict, default={})
        angles = np.zeros((pose_joints, 3))
        for name, triple in euler.items():
            joint = _pose_joint(name, tree, _pointer("euler", name), checker)
            values = checker.vector(triple, _pointer("euler", name), 3)
            if joint is not None and values is not None:
                angles[joint] = values
        pose = angles
    else:
        checker.add("", "нужно поле theta или euler")
    if checker.issues:
        return None
    try:
        body_pose = BodyPose(pose) if "theta" in data else pose_from_euler(pose, tree)
        return PoseFile(body_pose, BodyShape(beta))
    except BodyFitError as e:
        checker.add("/theta" if "theta" in data else "/euler", str(e))
        return None


def _check_matrix(data: dict, checker: _Checker, key: str, rows: int, cols: int) -> Optional[np.ndarray]:
    values = checker.get(data, key, "", list, default=None)
    if values is None:
        return None
    if len(values) != rows:
        checker.add(_pointer(key), f"ожидалось {rows} строк по {cols} чисел")
        return None
    parsed = [checker.vector(row, _pointer(key, i), cols) for i, row in enumerate(values)]
    if any(p is None for p in parsed):
        return None
    return np.stack(parsed)


# --- конфигурация запуска ---

@dataclass(frozen=True)
class ExportOptions:
    obj: bool = False
    vertex_uncertainty: bool = False
    csv_audit: bool = True
    xlsx_summary: bool = False


@dataclass(frozen=True)
class RunConfig:
    """
    Конфигурация запуска

    Attributes:
        assets: имя ресурса -> путь к файлу
        fit: параметры подгонки
        seed: 64-битное беззнаковое зерно
        output_dir: папка результатов
        exports: что дополнительно выгружать
        source: файл, из которого загружена конфигурация
    """
    assets: Dict[str, str] = field(default_factory=lambda: dict(ASSET_FILES))
    fit: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    output_dir: str = "results"
    exports: ExportOptions = field(default_factory=ExportOptions)
    source: Optional[Path] = None

    @property
    def fit_config(self) -> FitConfig:
        return replace(self.fit, seed=self.seed)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        return self if seed is None else replace(self, seed=int(seed))

    def asset_path(self, name: str) -> Path:
        return resolve_asset(self.assets.get(name, ASSET_FILES[name]), self.source)

    def load_assets(self) -> ModelAssets:
        return load_assets(self.asset_path("skeleton"), self.asset_path("limits"), self.asset_path("anthropometry"))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "assets": dict(self.assets),
            "fit": self.fit_config.to_dict(),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "exports": {key: getattr(self.exports, key) for key in EXPORT_KEYS},
        }


def _check_run_config(data: dict, checker: _Checker, source: Optional[Path]) -> Optional[RunConfig]:
    checker.format_version(data)
    assets = checker.get(data, "assets", "", dict, required=False, default={})
    resolved = dict(ASSET_FILES)
    for name, value in assets.items():
        if name not in ASSET_FILES:
            checker.add(_pointer("assets", name), f"неизвестный ресурс {name!r}")
        elif not isinstance(value, str):
            checker.add(_pointer("assets", name), "ожидался путь")
        else:
            resolved[name] = value
            if not resolve_asset(value, source).exists():
                checker.add(_pointer("assets", name), f"файл не найден: {value}")
    seed = checker.get(data, "seed", "", int, required=False, default=0)
    if seed is not None and not 0 <= seed < 2 ** 64:
        checker.add("/seed", "зерно должно быть 64-битным беззнаковым")
    output_dir = checker.get(data, "output_dir", "", str, required=False, default="results")
    exports_raw = checker.get(data, "exports", "", dict, required=False, default={})
    exports = {}
    for key, value in exports_raw.items():
        if key not in EXPORT_KEYS:
            checker.add(_pointer("exports", key), f"неизвестная выгрузка {key!r}")
        elif not isinstance(value, bool):
            checker.add(_pointer("exports", key), "ожидалось true или false")
        else:
            exports[key] = value
    fit_raw = checker.get(data, "fit", "", dict, required=False, default={})
    fit = None
    try:
        fit = FitConfig.from_dict(fit_raw)
    except (BodyFitError, TypeError) as e:
        checker.add("/fit", str(e))
    if checker.issues:
        return None
    return RunConfig(resolved, fit, seed, output_dir, ExportOptions(**exports), source)


# --- общий вход ---

def _env_asset_dir() -> Optional[Path]:
    for name in ASSETS_ENV_NAMES:
        if os.environ.get(name):
            return Path(os.environ[name])
    return None


def default_asset_dir() -> Path:
    return _env_asset_dir() or DATA_DIR


def resolve_asset(name: Union[str, Path], config_source: Optional[Path] = None) -> Path:
    """
    Явный абсолютный путь -> путь относительно файла конфигурации ->
    папка из $BODYFIT_ASSETS (или $KNOWN_ASSETS) -> данные пакета
    """
    path = Path(name)
    if path.is_absolute():
        return path
    candidates = []
    if config_source is not None:
        candidates.append(Path(config_source).parent / path)
    if _env_asset_dir() is not None:
        candidates.append(_env_asset_dir() / path)
    candidates.append(DATA_DIR / path)
    for candidate in candidates:
        if candidate.exists():
            return candidate
    return candidates[-1]


def _default_tree() -> KinematicTree:
    return load_and_validate(default_asset_dir() / ASSET_FILES["skeleton"], "skeleton").tree


def validate_data(data: Any, schema_id: str, source: str = "<data>", tree: Optional[KinematicTree] = None,
                  config_source: Optional[Path] = None):
    """Проверка уже прочитанного JSON; см. load_and_validate"""
    if schema_id not in SCHEMA_IDS:
        raise AssetValidationError(source, [("", f"неизвестная схема {schema_id!r}")])
    checker = _Checker()
    if not isinstance(data, dict):
        checker.add("", "корнем документа должен быть объект")
        checker.raise_if_any(source)
    if schema_id in ("limits", "anthropometry", "keypoints", "pose") and tree is None:
        tree = _default_tree()

    if schema_id == "skeleton":
        asset = _check_skeleton(data, checker)
    elif schema_id == "limits":
        asset = _check_limits(data, checker, tree)
    elif schema_id == "anthropometry":
        asset = _check_anthropometry(data, checker, tree)
    elif schema_id == "keypoints":
        asset = _check_keypoints(data, checker, tree)
    elif schema_id == "pose":
        asset = _check_pose(data, checker, tree)
    elif schema_id == "points":
        asset = _check_matrix(data, checker, "points", 3, 2)
    elif schema_id == "intrinsics":
        asset = _check_matrix(data, checker, "K", 3, 3)
    elif schema_id == "joints3d":
        count = (tree or _default_tree()).joint_count
        asset = _check_matrix(data, checker, "joints", count, 3)
    else:
        asset = _check_run_config(data, checker, config_source)
    checker.raise_if_any(source)
    return asset


def load_and_validate(path: Union[str, Path], schema_id: str, tree: Optional[KinematicTree] = None):
    """
    Читает и полностью проверяет файл данных

    Args:
        path: путь к JSON
        schema_id: одно из SCHEMA_IDS
        tree: скелет для проверки имен суставов (по умолчанию - из ресурсов пакета)

    Returns:
        Типизированный объект: BodyModel, LimitTable, AnthropometryTable, Keypoints2D,
        PoseFile, массив или RunConfig

    Raises:
        FileNotFoundError: файла нет
        AssetValidationError: список всех ошибок (json-pointer, сообщение)
    """
    path = Path(path)
    data = read_json(path)
    asset = validate_data(data, schema_id, str(path), tree, path if schema_id == "run_config" else None)
    logger.debug(f"Загружен {schema_id}: {path}")
    return asset


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Конфигурация запуска; без пути - конфигурация пакета по умолчанию"""
    return load_and_validate(path if path is not None else DATA_DIR / "run_config.json", "run_config")


def load_assets(skeleton: Optional[Path] = None, limits: Optional[Path] = None,
                anthropometry: Optional[Path] = None) -> ModelAssets:
    """Модель и таблицы ограничений; хеши канонического содержимого сохраняются в assets.hashes"""
    directory = default_asset_dir()
    paths = {
        "skeleton": Path(skeleton) if skeleton else directory / ASSET_FILES["skeleton"],
        "limits": Path(limits) if limits else directory / ASSET_FILES["limits"],
        "anthropometry": Path(anthropometry) if anthropometry else directory / ASSET_FILES["anthropometry"],
    }
    documents = {name: read_json(path) for name, path in paths.items()}
    model = validate_data(documents["skeleton"], "skeleton", str(paths["skeleton"]))
    table = validate_data(documents["limits"], "limits", str(paths["limits"]), model.tree)
    anthropometry = validate_data(documents["anthropometry"], "anthropometry", str(paths["anthropometry"]),
                                  model.tree)
    hashes = {name: content_hash(document) for name, document in documents.items()}
    logger.info(f"Загружены ресурсы модели из {paths['skeleton'].parent}")
    return ModelAssets(model, table.limits, table.rules, anthropometry, hashes)


def asset_to_dict(asset, tree: Optional[KinematicTree] = None) -> dict:
    """Обратное преобразование проверенного ресурса в документ"""
    if isinstance(asset, BodyModel):
        return skeleton_to_dict(asset)
    tree = tree or _default_tree()
    if isinstance(asset, LimitTable):
        return limits_to_dict(asset, tree)
    if isinstance(asset, AnthropometryTable):
        return anthropometry_to_dict(asset, tree)
    if isinstance(asset, RunConfig):
        return asset.to_dict()
    raise TypeError(f"Неподдерживаемый тип ресурса: {type(asset).__name__}")


def save_asset(path: Union[str, Path], asset, tree: Optional[KinematicTree] = None) -> Path:
    """Записывает ресурс в канонической форме"""
    from bodyfit.reporting import write_text_atomic
    return write_text_atomic(path, canonical_json(asset_to_dict(asset, tree)))
