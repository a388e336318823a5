"""Command-line entry points: simulate, run, eval, export.

Exit codes: 0 success, 2 bad usage/configuration, 3 missing or malformed
input files, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import yaml

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4


def cmd_simulate(args):
    from .sim.presets import make_scenario

    with open(args.spec) as f:
        spec = yaml.safe_load(f)
    if not isinstance(spec, dict) or "preset" not in spec:
        raise SystemExit2("simulation spec must be a mapping with a 'preset' key")
    out_dir = args.out or spec.get("out")
    if not out_dir:
        raise SystemExit2("output directory required ('--out' or 'out' key)")
    allowed = {"preset", "out", "seed", "args"}
    unknown = set(spec) - allowed
    if unknown:
        raise SystemExit2(f"unknown spec key(s): {sorted(unknown)}")
    scenario = make_scenario(spec["preset"], **(spec.get("args") or {}))
    scenario.generate(out_dir, seed=int(spec.get("seed", 0)))
    print(f"wrote sequence '{scenario.name}' to {out_dir}")
    return 0


def cmd_run(args):
    from .config import load_config
    from .pipeline import run

    cfg = load_config(args.config)
    report = run(cfg)
    n = len(report.trajectory)
    print(f"run complete: {n} trajectory poses, {report.map.n} map points; "
          f"outputs in {cfg.output_dir}")
    return 0


def cmd_eval(args):
    from .evaluation import (
        Trajectory,
        endpoint_drift,
        format_rpe_table,
        relative_pose_errors,
        write_rpe_csv,
    )

    est = Trajectory.read_csv(args.est)
    gt = Trajectory.read_csv(args.gt)
    lengths = [float(x) for x in args.lengths.split(",")]

    from .evaluation import relative_pose
    gt_rel = relative_pose(gt.rotations[0], gt.positions[0],
                           gt.rotations[-1], gt.positions[-1])
    rot_d, trans_d = endpoint_drift(est, gt_rel)
    print(f"Drift in translation (m): {trans_d:.6f}")
    print(f"Drift in rotation (deg):  {rot_d:.6f}")
    results = relative_pose_errors(est, gt, lengths=lengths)
    print(format_rpe_table(results))
    if args.csv:
        write_rpe_csv(results, args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_export(args):
    from .mapping import VoxelMap

    npz_path = os.path.join(args.run_dir, "map.npz")
    if not os.path.exists(npz_path):
        raise SystemExit3(f"no map.npz in {args.run_dir} (run the pipeline first)")
    data = np.load(npz_path)
    vmap = VoxelMap(min_spacing=0.0)
    vmap._grow(len(data["positions"]))
    n = len(data["positions"])
    vmap.positions[:n] = data["positions"]
    vmap.colors[:n] = data["colors"]
    vmap.n = n
    out = args.out or os.path.join(args.run_dir, f"map.{args.format}")
    if args.format == "ply":
        vmap.export_ply(out)
    else:
        vmap.export_pcd(out)
    print(f"wrote {out} ({n} points)")
    return 0


class SystemExit2(Exception):
    pass


class SystemExit3(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(
        prog="livo",
        description="LiDAR-inertial-visual odometry: simulate, run, evaluate.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="synthesize a sensor sequence")
    ps.add_argument("spec", help="YAML scenario spec (preset, seed, args)")
    ps.add_argument("--out", help="output sequence directory")
    ps.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("run", help="replay a sequence through the estimator")
    pr.add_argument("config", help="YAML pipeline configuration")
    pr.set_defaults(func=cmd_run)

    pe = sub.add_parser("eval", help="trajectory metrics against ground truth")
    pe.add_argument("est", help="estimated trajectory CSV")
    pe.add_argument("gt", help="ground-truth trajectory CSV")
    pe.add_argument("--lengths", default="50,100,150,200,250,300",
                    help="comma-separated sub-sequence lengths in meters")
    pe.add_argument("--csv", help="also write machine-readable results here")
    pe.set_defaults(func=cmd_eval)

    px = sub.add_parser("export", help="export a run's map")
    px.add_argument("run_dir", help="directory written by 'run'")
    px.add_argument("--format", choices=("ply", "pcd"), default="ply")
    px.add_argument("--out", help="output file path")
    px.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SystemExit3, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError, json.JSONDecodeError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # pragma: no cover - unexpected failure path
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
