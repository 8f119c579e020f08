"""Command-line entry point.

Subcommands: ``run`` (one simulation -> log CSV + metrics JSON),
``compare`` (a controller x k_s x seed grid -> summary CSV + JSON),
``identify`` (fit wall-force parameters from a log CSV) and ``bench``
(solver latency, optionally against the pure-numpy fallback).

Exit codes: 0 success, 1 runtime failure, 2 config/parse error,
3 insufficient excitation. The output root comes from --out or the
WALLMPC_OUT environment variable (default: current directory).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .accel import DISABLE_ENV
from .bench import bench_mpc_solve
from .config import ConfigError, load_config_file, load_defaults, sim_config_from_dict
from .identification import InsufficientExcitationError, identify
from .sim import SimLog, id_samples_from_log, simulate

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_EXCITATION = 3

OUT_ENV = "WALLMPC_OUT"


def _out_dir(args) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or "."
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(args) -> int:
    try:
        doc = load_config_file(args.config)
        cfg = sim_config_from_dict(doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    name = doc.get("name", "run")
    try:
        log, metrics = simulate(cfg)
    except Exception as exc:  # noqa: BLE001 - report and set the exit code
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = _out_dir(args)
    log_path = out / f"{name}_log.csv"
    metrics_path = out / f"{name}_metrics.json"
    log.to_csv(log_path)
    metrics_path.write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    print(f"wrote {log_path} and {metrics_path}")
    return EXIT_OK


def _one_compare_run(payload):
    """Executed per grid cell, possibly in a worker process."""
    doc, controller, k_s, seed, run_name, out_dir = payload
    doc = json.loads(doc)
    doc["controller"] = controller
    doc["seed"] = seed
    doc.setdefault("suction_true", {})["k_s"] = k_s
    if doc.get("suction_ctrl") is not None:
        doc["suction_ctrl"]["k_s"] = k_s
    try:
        cfg = sim_config_from_dict(doc)
        log, metrics = simulate(cfg)
    except Exception as exc:  # noqa: BLE001
        return {"name": run_name, "controller": controller, "k_s": k_s,
                "seed": seed, "status": f"failed: {exc}"}
    if out_dir is not None:
        log.to_csv(Path(out_dir) / f"{run_name}_log.csv")
    row = {
        "name": run_name, "controller": controller, "k_s": k_s, "seed": seed,
        "status": "ok",
        "mae_x": float(metrics.mae[0]), "mae_y": float(metrics.mae[1]),
        "mae_z": float(metrics.mae[2]),
        "rmse_x": float(metrics.rmse[0]), "rmse_y": float(metrics.rmse[1]),
        "rmse_z": float(metrics.rmse[2]),
        "collisions": metrics.collision_count,
        "max_penetration": metrics.max_penetration,
        "mean_solve_ms": float(np.mean(log.solve_ms)),
    }
    return row


_SUMMARY_FIELDS = ["name", "controller", "k_s", "seed", "status",
                   "mae_x", "mae_y", "mae_z", "rmse_x", "rmse_y", "rmse_z",
                   "collisions", "max_penetration", "mean_solve_ms"]


def cmd_compare(args) -> int:
    try:
        spec = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        print(f"error: spec file not found: {args.spec}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON in {args.spec}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    controllers = spec.get("controllers", ["pid", "mpc", "scmpc"])
    ks_values = spec.get("k_s", [10.0])
    seeds = spec.get("seeds", [0])
    if not controllers or not ks_values or not seeds:
        print("error: compare grid is empty", file=sys.stderr)
        return EXIT_CONFIG
    base = json.dumps(deep_base(spec))

    out = _out_dir(args)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    jobs = []
    for controller in controllers:
        for k_s in ks_values:
            for seed in seeds:
                run_name = f"{controller}_ks{k_s:g}_seed{seed}"
                jobs.append((base, controller, float(k_s), int(seed),
                             run_name, str(runs_dir)))

    n_workers = max(1, int(args.jobs))
    if n_workers == 1:
        rows = [_one_compare_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_one_compare_run, jobs))

    name = spec.get("name", "compare")
    summary_json = out / f"{name}_summary.json"
    summary_csv = out / f"{name}_summary.csv"
    summary_json.write_text(json.dumps(rows, indent=2) + "\n")
    with open(summary_csv, "w") as fh:
        fh.write(",".join(_SUMMARY_FIELDS) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[k]) if isinstance(row.get(k), float)
                              else str(row.get(k, "")) for k in _SUMMARY_FIELDS) + "\n")
    n_failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"wrote {summary_csv} ({len(rows)} runs, {n_failed} failed)")
    return EXIT_RUNTIME if n_failed == len(rows) else EXIT_OK


def deep_base(spec: dict) -> dict:
    from .config import deep_merge

    return deep_merge(load_defaults(), spec.get("base", {}))


def cmd_identify(args) -> int:
    try:
        log = SimLog.from_csv(args.log)
    except FileNotFoundError:
        print(f"error: log file not found: {args.log}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        doc = load_config_file(args.config) if args.config else load_defaults()
        cfg = sim_config_from_dict(doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    samples = id_samples_from_log(log)
    try:
        result = identify(
            samples,
            init=(args.ks0, args.dthr0),
            planes=cfg.planes,
            vehicle=cfg.vehicle,
            rotor_offsets=cfg.suction_true.rotor_offsets,
            d_min=cfg.suction_true.d_min,
        )
    except InsufficientExcitationError as exc:
        print(f"error: insufficient excitation: {exc}", file=sys.stderr)
        return EXIT_EXCITATION

    payload = json.dumps(result.to_dict(), indent=2)
    print(payload)
    out = _out_dir(args) / "identification.json"
    out.write_text(payload + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    result = bench_mpc_solve(n_solves=args.n_solves)
    results = [result.to_dict()]
    if args.compare_fallback:
        env = dict(os.environ, **{DISABLE_ENV: "1"})
        proc = subprocess.run(
            [sys.executable, "-m", "wallmpc.cli", "bench",
             "--n-solves", str(args.n_solves), "--json-only"],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode == 0:
            results.extend(json.loads(proc.stdout))
        else:
            print(f"fallback benchmark failed: {proc.stderr}", file=sys.stderr)
    payload = json.dumps(results, indent=2)
    print(payload)
    if not args.json_only:
        out = _out_dir(args) / "bench.json"
        out.write_text(payload + "\n")
        for r in results:
            mode = "numba" if r["numba"] else "numpy fallback"
            print(f"{r['scenario']} [{mode}]: mean {r['mean_ms']:.2f} ms, "
                  f"median {r['median_ms']:.2f} ms, p99 {r['p99_ms']:.2f} ms",
                  file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wallmpc",
        description="Near-wall quadrotor control simulations and identification",
    )
    parser.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUT_ENV} or '.')")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation from a JSON config")
    p_run.add_argument("config")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="run a controller/k_s/seed grid")
    p_cmp.add_argument("spec")
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.set_defaults(fn=cmd_compare)

    p_id = sub.add_parser("identify", help="fit wall-force parameters from a log")
    p_id.add_argument("log")
    p_id.add_argument("--ks0", type=float, default=1.0)
    p_id.add_argument("--dthr0", type=float, default=0.2)
    p_id.add_argument("--config", default=None)
    p_id.set_defaults(fn=cmd_identify)

    p_bench = sub.add_parser("bench", help="time warm-started solver ticks")
    p_bench.add_argument("--n-solves", type=int, default=200)
    p_bench.add_argument("--compare-fallback", action="store_true")
    p_bench.add_argument("--json-only", action="store_true")
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
