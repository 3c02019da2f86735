"""Command-line entry points: generate, solve, benchmark, selftest.

Every run is fully described by a flat JSON config file plus a seed; flags
override config values. Exit codes: 0 success, 1 usage or config error,
2 runtime or partial failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any

from .evaluate import BenchmarkConfig, run_benchmark, write_histogram_csv
from .posegraph import SolverParams, build_pose_graph, optimize, relative_poses
from .scenario import (
    DetectorSpec,
    NoiseSpec,
    ScenarioError,
    generate_scene,
    load_json,
    make_messages,
    save_json,
    scene_from_dict,
    scene_to_dict,
)

ENV_THREADS = "AGENTPOSE_THREADS"

_CONFIG_DEFAULTS: dict[str, Any] = {
    "agents": 4,
    "objects": 10,
    "area": [120.0, 120.0],
    "extent": [140.0, 140.0],
    "min_object_gap": 5.0,
    "scenes": 100,
    "seed": None,
    "ego": None,
    "cluster_gap": 2.0,
    "nms_iou": 0.15,
    "ap_thresholds": [0.5, 0.7],
    "noise": {"kind": "gaussian", "trans_scale": 0.6, "rot_scale": 0.6},
    "noise_grid": [[0.0, 0.0], [0.2, 0.2], [0.4, 0.4], [0.6, 0.6]],
    "detector": {
        "detection_range": 150.0,
        "miss_rate": 0.0,
        "center_noise_sd": 0.2,
        "heading_noise_sd": 0.05,
        "variance_calibration": 1.0,
        "base_confidence": 0.9,
        "confidence_decay": 0.2,
        "noise_scale_choices": None,
    },
    "solver": {
        "max_iterations": 1000,
        "initial_damping": 1e-4,
        "damping_increase": 10.0,
        "damping_decrease": 0.5,
        "convergence_tol": 1e-9,
        "gradient_tol": 1e-10,
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _merge_config(path: str | None) -> dict:
    config = json.loads(json.dumps(_CONFIG_DEFAULTS))
    if path is None:
        return config
    try:
        user = load_json(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise UsageError(f"config {path}: top level must be an object")
    for key, value in user.items():
        if key not in config:
            raise UsageError(f"config {path}: unknown key {key!r}")
        if isinstance(config[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config {path}: field {key!r} must be an object")
            for sub, subval in value.items():
                if sub not in config[key]:
                    raise UsageError(f"config {path}: unknown key {key}.{sub}")
                config[key][sub] = subval
        else:
            config[key] = value
    return config


def _build_noise(cfg: dict) -> NoiseSpec:
    try:
        return NoiseSpec(
            kind=cfg["noise"]["kind"],
            trans_scale=float(cfg["noise"]["trans_scale"]),
            rot_scale=float(cfg["noise"]["rot_scale"]),
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(f"config field 'noise': {exc}") from exc


def _build_detector(cfg: dict) -> DetectorSpec:
    det = dict(cfg["detector"])
    if det.get("noise_scale_choices") is not None:
        det["noise_scale_choices"] = tuple(det["noise_scale_choices"])
    try:
        return DetectorSpec(**det)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"config field 'detector': {exc}") from exc


def _build_solver(cfg: dict) -> SolverParams:
    try:
        return SolverParams(**cfg["solver"])
    except (ValueError, TypeError) as exc:
        raise UsageError(f"config field 'solver': {exc}") from exc


def _require_seed(cfg: dict, args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else cfg["seed"]
    if seed is None:
        raise UsageError("a seed is required (--seed or config 'seed')")
    return int(seed)


def _thread_count(args: argparse.Namespace) -> int:
    if args.threads is not None:
        return max(1, int(args.threads))
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"{ENV_THREADS} must be an integer, got {env!r}") from exc
    return 1


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args.config)
    seed = _require_seed(cfg, args)
    scene = generate_scene(
        int(cfg["agents"]),
        int(cfg["objects"]),
        area=tuple(cfg["area"]),
        seed=seed,
        extent=tuple(cfg["extent"]),
        min_object_gap=float(cfg["min_object_gap"]),
    )
    out = args.out or "scene.json"
    try:
        save_json(scene_to_dict(scene), out)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return 2
    print(f"seed: {seed}")
    print(f"wrote {out}")
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    cfg = _merge_config(args.config)
    try:
        scene = scene_from_dict(load_json(args.scene))
    except OSError as exc:
        raise UsageError(f"cannot read scene {args.scene}: {exc}") from exc
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"scene {args.scene}: {exc}") from exc
    ego = args.ego or cfg["ego"] or scene.agents[0].agent_id
    if all(a.agent_id != ego for a in scene.agents):
        raise UsageError(f"ego agent {ego!r} not present in scene")
    seed = args.seed if args.seed is not None else (cfg["seed"] if cfg["seed"] is not None else 0)
    noise = _build_noise(cfg)
    detector = _build_detector(cfg)
    solver = _build_solver(cfg)

    messages = make_messages(scene, noise, detector, int(seed))
    graph = build_pose_graph(messages, ego, center_gap=float(cfg["cluster_gap"]))
    result = optimize(graph, solver)
    rel = relative_poses(result.agent_poses, ego)
    payload = {
        "type": "solve_result",
        "version": 1,
        "ego": ego,
        "seed": int(seed),
        "measured_poses": {m.agent_id: [m.measured_pose.x, m.measured_pose.y, m.measured_pose.theta] for m in messages},
        "corrected_global_poses": {aid: [p.x, p.y, p.theta] for aid, p in result.agent_poses.items()},
        "corrected_relative_poses": {aid: [p.x, p.y, p.theta] for aid, p in rel.items()},
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "objective_trace": list(result.objective_trace),
    }
    if args.out:
        try:
            save_json(payload, args.out)
        except OSError as exc:
            print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
            return 2
        print(f"wrote {args.out}")
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = _merge_config(args.config)
    seed = _require_seed(cfg, args)
    try:
        config = BenchmarkConfig(
            seed=seed,
            scenes=int(cfg["scenes"]),
            num_agents=int(cfg["agents"]),
            num_objects=int(cfg["objects"]),
            area=tuple(cfg["area"]),
            extent=tuple(cfg["extent"]),
            min_object_gap=float(cfg["min_object_gap"]),
            noise_kind=cfg["noise"]["kind"],
            noise_grid=tuple(tuple(level) for level in cfg["noise_grid"]),
            detector=_build_detector(cfg),
            solver=_build_solver(cfg),
            cluster_gap=float(cfg["cluster_gap"]),
            nms_iou=float(cfg["nms_iou"]),
            ap_thresholds=tuple(cfg["ap_thresholds"]),
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid benchmark config: {exc}") from exc

    result = run_benchmark(config, threads=_thread_count(args))
    stem = args.out or "benchmark"
    if stem.endswith(".json"):
        stem = stem[: -len(".json")]
    report_path = f"{stem}.json"
    try:
        save_json(result.to_dict(), report_path)
        print(f"wrote {report_path}")
        if args.format == "csv":
            for level in result.levels:
                label = f"{level.noise.trans_scale:g}-{level.noise.rot_scale:g}"
                for metric in ("translation", "rotation"):
                    path = f"{stem}.{label}.{metric}.csv"
                    write_histogram_csv(level, metric, path)
                    print(f"wrote {path}")
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 2
    for level in result.levels:
        ratio = level.median_reduction_ratio
        t = "n/a" if ratio["translation"] is None else f"{ratio['translation']:.3f}"
        r = "n/a" if ratio["rotation"] is None else f"{ratio['rotation']:.3f}"
        print(
            f"noise {level.noise.trans_scale:g}/{level.noise.rot_scale:g}: "
            f"median reduction translation={t} rotation={r}"
        )
    return 0 if result.status == "clean" else 2


def _cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_selftest

    results = run_selftest()
    failed = 0
    for name, ok, detail in results:
        status = "ok" if ok else "FAIL"
        line = f"{status:4s} {name}"
        if detail:
            line += f" ({detail})"
        print(line)
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


def _make_parser() -> _Parser:
    parser = _Parser(prog="agentpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--out", help="output path")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--threads", type=int, help=f"worker processes (default ${ENV_THREADS} or 1)")

    p_gen = sub.add_parser("generate", help="write a synthetic scene JSON")
    common(p_gen)
    p_solve = sub.add_parser("solve", help="correct relative poses for one scene")
    common(p_solve)
    p_solve.add_argument("--scene", required=True, help="scene JSON file")
    p_solve.add_argument("--ego", help="ego agent id (default: first agent)")
    p_bench = sub.add_parser("benchmark", help="run the noise-grid benchmark")
    common(p_bench)
    p_self = sub.add_parser("selftest", help="run oracle-based property checks")
    common(p_self)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "benchmark":
            return _cmd_benchmark(args)
        return _cmd_selftest(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
