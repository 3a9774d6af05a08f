#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Командная строка bodyfit: подгонка, пакетное уточнение, аудит ограничений
и решатель глубины для трех коллинеарных точек.

Коды выхода: 0 - успех, 1 - ошибка пользователя (входные данные, флаги),
2 - внутренняя ошибка.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from bodyfit import __version__
from bodyfit.body_model import build_surface, surface_to_obj
from bodyfit.camera import Intrinsics, project_perspective, solve_collinear_depth
from bodyfit.constraints import ModelAssets
from bodyfit.errors import BodyFitError, NoDataError, NoSolutionError
from bodyfit.evaluation import AuditReport, audit_constraints, summarize_audits
from bodyfit.fitter import FitResult, evaluate_loss, fit, fit_with_pair3d, identify_minorities, \
    refine_batch
from bodyfit.io_config import FORMAT_VERSION, PoseFile, RunConfig, load_and_validate, load_run_config
from bodyfit.logging_setup import setup_logging
from bodyfit.probabilistic import vertex_epistemic_uncertainty
from bodyfit.reporting import write_frame_csv, write_frame_xlsx, write_json_atomic, write_text_atomic
from bodyfit.workers import parallel_map, sample_seed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2
SUMMARY_COLUMNS = ["sample", "epistemic_trace", "weight", "minority", "pre_loss", "post_loss", "converged", "error"]


class BodyFitArgumentParser(argparse.ArgumentParser):
    """Ошибки разбора флагов завершают работу с кодом 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER_ERROR, f"{self.prog}: ошибка: {message}\n")


def _sample_files(directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Папка не найдена: {directory}")
    files = sorted(directory.glob("*.json"))
    if not files:
        raise NoDataError(f"В папке {directory} нет файлов .json")
    return files


def _result_document(command: str, config: RunConfig, assets: ModelAssets, inputs: dict, payload: dict) -> dict:
    """Результат с копией конфигурации и хешами ресурсов"""
    return {
        "format_version": FORMAT_VERSION,
        "bodyfit_version": __version__,
        "command": command,
        "config": config.to_dict(),
        "asset_hashes": dict(assets.hashes),
        "inputs": inputs,
        **payload,
    }


def _fit_payload(result: FitResult, assets: ModelAssets) -> dict:
    payload = result.to_dict()
    payload["joints3d"] = result.joints(assets).tolist()
    return {"result": payload}


# --- fit ---

def cmd_fit(args) -> int:
    config = load_run_config(args.config).with_seed(args.seed)
    assets = config.load_assets()
    observed = load_and_validate(args.keypoints, "keypoints", assets.tree)
    fit_config = config.fit_config
    inputs = {"keypoints": Path(args.keypoints).name}

    if args.gt3d:
        gt3d = load_and_validate(args.gt3d, "joints3d", assets.tree)
        inputs["gt3d"] = Path(args.gt3d).name
        result = fit_with_pair3d(observed, gt3d, fit_config, assets)
    else:
        result = fit(observed, fit_config, assets)

    document = _result_document("fit", config, assets, inputs, _fit_payload(result, assets))
    obj_path = args.obj or (Path(args.out).with_suffix(".obj") if config.exports.obj else None)
    if obj_path or config.exports.vertex_uncertainty:
        vertex = vertex_epistemic_uncertainty(result.belief, assets.model, fit_config.uncertainty_samples,
                                              fit_config.seed)
        if config.exports.vertex_uncertainty:
            document["vertex_uncertainty"] = vertex.normalized.tolist()
        if obj_path:
            surface = build_surface(result.belief.pose, result.belief.shape, assets.model)
            write_text_atomic(obj_path, surface_to_obj(surface, vertex.colors()))
            logger.info(f"Поверхность с цветами неопределенности сохранена: {obj_path}")

    write_json_atomic(args.out, document)
    report = result.report
    print(f"Подгонка завершена: потеря {result.total_loss:.6g}, "
          f"сходимость {'да' if result.converged else 'нет'}, итераций {result.iterations}")
    print(f"Неопределенность (пикс.^2): алеаторная {report.aleatoric_trace:.4g}, "
          f"эпистемическая {report.epistemic_trace:.4g}, полная {report.total_trace:.4g}")
    print(f"Результат: {args.out}")
    return EXIT_OK


# --- refine ---

def _initial_fit_task(task) -> Union[FitResult, str]:
    sample, observed, config, assets = task
    try:
        return fit(observed, config, assets)
    except BodyFitError as e:
        logger.warning(f"Начальная подгонка образца {sample} не удалась: {e}")
        return str(e)
    except Exception as e:
        error = BodyFitError(f"образец {sample}: непредвиденная ошибка {type(e).__name__}: {e}")
        logger.error(str(error), exc_info=True)
        return str(error)


def cmd_refine(args) -> int:
    config = load_run_config(args.config).with_seed(args.seed)
    assets = config.load_assets()
    files = _sample_files(args.batch)
    observations = [load_and_validate(path, "keypoints", assets.tree) for path in files]
    fit_config = config.fit_config
    logger.info(f"Пакет из {len(files)} образцов, процессов: {args.jobs or 'все ядра'}")

    tasks = [(path.stem, observed, replace(fit_config, seed=sample_seed(fit_config.seed, i)), assets)
             for i, (path, observed) in enumerate(zip(files, observations))]
    initial = parallel_map(_initial_fit_task, tasks, args.jobs, progress=args.progress, desc="Подгонка")
    good = [i for i, result in enumerate(initial) if isinstance(result, FitResult)]
    if not good:
        raise NoDataError("Ни один образец пакета не удалось подогнать")

    refined = refine_batch([initial[i] for i in good], [observations[i] for i in good], fit_config, assets,
                           args.jobs, progress=args.progress, names=[files[i].stem for i in good])
    traces = np.array([initial[i].report.epistemic_trace for i in good])
    minority = identify_minorities(traces, args.percentile)

    out_dir = Path(args.out)
    rows = []
    for i, path in enumerate(files):
        row = {"sample": path.stem, "epistemic_trace": np.nan, "weight": np.nan, "minority": False,
               "pre_loss": np.nan, "post_loss": np.nan, "converged": False, "error": initial[i]}
        if i in good:
            k = good.index(i)
            result = refined[k]
            post = evaluate_loss(replace(result, weight=1.0), observations[i], fit_config, assets)["total"]
            row.update({"epistemic_trace": traces[k], "weight": result.weight, "minority": bool(minority[k]),
                        "pre_loss": initial[i].total_loss, "post_loss": post, "converged": result.converged,
                        "error": result.error or ""})
            document = _result_document("refine", config, assets, {"keypoints": path.name},
                                        _fit_payload(result, assets))
            document["refinement"] = {"weight": result.weight, "minority": bool(minority[k]),
                                      "initial": initial[i].to_dict()}
            write_json_atomic(out_dir / f"{path.stem}.result.json", document)
        rows.append(row)

    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    write_frame_csv(out_dir / "summary.csv", frame)
    if config.exports.xlsx_summary:
        write_frame_xlsx(out_dir / "summary.xlsx", frame, "refine")
    print(f"Уточнено образцов: {len(good)} из {len(files)}, меньшинств: {int(minority.sum())}")
    print(f"Сумма весов: {frame['weight'].sum():.12g}")
    print(f"Сводка: {out_dir / 'summary.csv'}")
    return EXIT_OK


# --- audit ---

def _audit_task(task) -> Union[AuditReport, str]:
    path, assets = task
    try:
        pose_file: PoseFile = load_and_validate(path, "pose", assets.tree)
        return audit_constraints(pose_file.pose, pose_file.shape, assets)
    except BodyFitError as e:
        logger.warning(f"Аудит образца {Path(path).stem} не удался: {e}")
        return str(e)
    except Exception as e:
        error = BodyFitError(f"образец {Path(path).stem}: непредвиденная ошибка {type(e).__name__}: {e}")
        logger.error(str(error), exc_info=True)
        return str(error)


def cmd_audit(args) -> int:
    config = load_run_config(args.config)
    assets = config.load_assets()
    if args.pose:
        pose_file: PoseFile = load_and_validate(args.pose, "pose", assets.tree)
        report = audit_constraints(pose_file.pose, pose_file.shape, assets)
        document = _result_document("audit", config, assets, {"pose": Path(args.pose).name},
                                    {"audit": report.to_dict()})
        write_json_atomic(args.out, document)
        print(f"Нарушений углов: {len(report.violations)}, "
              f"взаимопроникновение: {'да' if report.penetration else 'нет'}")
        for record in report.violations:
            print(f"  [{record['kind']}] {record['joint']} ось {record['axis']}: {record['angle_deg']:.2f} "
                  f"вне [{record['lower']:.1f}, {record['upper']:.1f}] на {record['magnitude_deg']:.2f}")
        return EXIT_OK

    files = _sample_files(args.corpus)
    reports = parallel_map(_audit_task, [(path, assets) for path in files], args.jobs,
                           progress=args.progress, desc="Аудит")
    corpus = summarize_audits([path.stem for path in files], reports)
    write_frame_csv(args.out, corpus.frame)
    if config.exports.xlsx_summary:
        write_frame_xlsx(Path(args.out).with_suffix(".xlsx"), corpus.frame, "audit")
    failed = sum(1 for report in reports if not isinstance(report, AuditReport))
    print(f"Образцов: {len(files)}, с ошибкой: {failed}, взаимопроникновение: {corpus.penetration_percentage:.1f}%")
    return EXIT_OK


# --- depth-solve ---

def cmd_depth_solve(args) -> int:
    points = load_and_validate(args.points, "points")
    intrinsics = Intrinsics(load_and_validate(args.intrinsics, "intrinsics"))
    try:
        solved = solve_collinear_depth(points, intrinsics, args.d12, args.d13)
    except NoSolutionError as e:
        raise NoSolutionError(f"no-solution: {e}") from None
    reprojection = float(np.max(np.linalg.norm(project_perspective(solved, intrinsics) - points, axis=1)))
    document = {
        "format_version": FORMAT_VERSION,
        "command": "depth-solve",
        "inputs": {"points": Path(args.points).name, "intrinsics": Path(args.intrinsics).name,
                   "d12": args.d12, "d13": args.d13},
        "points3d": solved.tolist(),
        "depths": solved[:, 2].tolist(),
        "reprojection_error_px": reprojection,
    }
    if args.out:
        write_json_atomic(args.out, document)
    for i, point in enumerate(solved, start=1):
        print(f"P{i}: {point[0]:.9f} {point[1]:.9f} {point[2]:.9f}")
    return EXIT_OK


# --- разбор флагов ---

def _common_options() -> argparse.ArgumentParser:
    common = BodyFitArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON конфигурации запуска (по умолчанию - конфигурация пакета)")
    common.add_argument("--seed", type=int, help="зерно, 0 <= seed < 2^64 (переопределяет конфигурацию)")
    common.add_argument("--jobs", type=int, default=None, help="число процессов (по умолчанию - все ядра)")
    common.add_argument("--log-dir", type=Path, help="папка для файла журнала bodyfit.log")
    common.add_argument("--verbose", action="store_true", help="подробный журнал (DEBUG)")
    common.add_argument("--progress", action="store_true", help="индикатор выполнения в stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = BodyFitArgumentParser(prog="bodyfit", description="Восстановление 3D тела по 2D ключевым точкам")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="КОМАНДА")

    fit_parser = commands.add_parser("fit", parents=[common], help="подгонка по ключевым точкам")
    fit_parser.add_argument("--keypoints", required=True, help="JSON ключевых точек")
    fit_parser.add_argument("--out", required=True, help="JSON результата")
    fit_parser.add_argument("--gt3d", help="JSON парных 3D суставов (система тела)")
    fit_parser.add_argument("--obj", help="OBJ поверхности с цветами неопределенности вершин")
    fit_parser.set_defaults(handler=cmd_fit)

    refine_parser = commands.add_parser("refine", parents=[common], help="пакетное уточнение по неопределенности")
    refine_parser.add_argument("--batch", required=True, help="папка с JSON ключевых точек")
    refine_parser.add_argument("--out", required=True, help="папка результатов")
    refine_parser.add_argument("--percentile", type=float, default=90.0, help="порог меньшинств, перцентиль")
    refine_parser.set_defaults(handler=cmd_refine)

    audit_parser = commands.add_parser("audit", parents=[common], help="аудит ограничений позы или корпуса")
    source = audit_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--pose", help="JSON одной позы")
    source.add_argument("--corpus", help="папка с JSON поз")
    audit_parser.add_argument("--out", required=True, help="JSON (поза) или CSV (корпус)")
    audit_parser.set_defaults(handler=cmd_audit)

    depth_parser = commands.add_parser("depth-solve", parents=[common], help="глубины трех коллинеарных точек")
    depth_parser.add_argument("--points", required=True, help="JSON трех 2D точек")
    depth_parser.add_argument("--intrinsics", required=True, help="JSON матрицы K")
    depth_parser.add_argument("--d12", type=float, required=True, help="расстояние |P1P2|, м")
    depth_parser.add_argument("--d13", type=float, required=True, help="расстояние |P1P3|, м")
    depth_parser.add_argument("--out", help="JSON результата")
    depth_parser.set_defaults(handler=cmd_depth_solve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Точка входа; возвращает код выхода"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_dir, args.verbose)
    try:
        return args.handler(args)
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_USER_ERROR
    except BodyFitError as e:
        logger.error(f"Ошибка входных данных: {e}")
        return EXIT_USER_ERROR
    except Exception as e:
        logger.error(f"Внутренняя ошибка: {e}", exc_info=args.verbose)
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
