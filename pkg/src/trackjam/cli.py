"""Command-line entry point.

Subcommands:
  run <config>          run one seeded scenario and write its trace CSV
  experiment <spec>     run an experiment spec (single / sweep / ablation)
  oracle-check <config> compare the GRASP solver against the exhaustive
                        oracle on the config's initial geometry (the joint
                        action space must fit under the oracle cap)
  version               print the package version

Exit codes: 0 success, 1 config/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, load_experiment
from .control import evaluate_joint, exhaustive_oracle, grasp_solve, problem_from_grids
from .experiments import run_experiment
from .geometry import aim_axis
from .sim import _keyed_stream, run_scenario
from .traceio import write_trace_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackjam", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write its trace")
    p_run.add_argument("config", help="scenario config file (YAML)")
    p_run.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_run.add_argument("--out-dir", default="results", help="output directory")

    p_exp = sub.add_parser("experiment", help="run an experiment spec")
    p_exp.add_argument("spec", help="experiment spec file (YAML)")
    p_exp.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    p_exp.add_argument("--out-dir", default=None, help="override the output directory")
    p_exp.add_argument("--trials", type=int, default=None, help="override the trial count")

    p_orc = sub.add_parser("oracle-check", help="GRASP vs exhaustive oracle")
    p_orc.add_argument("config", help="scenario config file (YAML); keep the grid small")
    p_orc.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_orc.add_argument("--trials", type=int, default=5, help="number of seeded comparisons")

    sub.add_parser("version", help="print the package version")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    trace = run_scenario(cfg)
    out = Path(args.out_dir)
    path = out / f"trace_seed{cfg.master_seed}.csv"
    write_trace_csv(trace, path)
    tracked = [rec.ospa_m for rec in trace.records if rec.truth_present and rec.fused_estimate is not None]
    mean_ospa = float(np.mean(tracked)) if tracked else float("nan")
    print(f"wrote {path} ({len(trace.records)} steps, mean tracked OSPA {mean_ospa:.3f} m)")
    return 0


def _cmd_experiment(args) -> int:
    spec = load_experiment(args.spec)
    if args.seed is not None:
        spec.master_seed = int(args.seed)
    if args.trials is not None:
        spec.n_trials = int(args.trials)
    result = run_experiment(spec, out_dir=args.out_dir)
    n_traces = sum(len(v) for v in result.trace_paths.values())
    print(f"wrote {n_traces} trace files and {result.summary_path}")
    return 0


def _cmd_oracle_check(args) -> int:
    cfg = load_config(args.config)
    seed = int(args.seed) if args.seed is not None else cfg.master_seed
    target = np.asarray(cfg.target_initial_state, dtype=float)[:3]
    positions = [np.asarray(p, dtype=float) for p in cfg.agent_initial_positions]
    axes = [aim_axis(p, target) for p in positions]
    prob = problem_from_grids(
        prev_positions=positions,
        grid=cfg.grid,
        level_set=cfg.level_set,
        target_estimate=target,
        n_required=cfg.n_required,
        tolerances_w=cfg.tolerances_w,
        sensing=cfg.sensing,
        prev_axes=axes,
        box=cfg.box,
        constraints_enabled=cfg.constraints_enabled,
    )
    oracle = exhaustive_oracle(prob)
    oracle_obj, _ = evaluate_joint(oracle, prob)
    matches = 0
    for trial in range(args.trials):
        rng = _keyed_stream(seed + trial, 0)
        joint = grasp_solve(prob, cfg.n_samples, cfg.n_iterations, rng, cfg.local_search_neighbors)
        obj, feasible = evaluate_joint(joint, prob)
        gap = oracle_obj - obj
        matches += gap == 0.0
        print(
            f"trial {trial}: grasp {obj:.6f} oracle {oracle_obj:.6f} "
            f"gap {gap:.2e} feasible {feasible}"
        )
    print(f"{matches}/{args.trials} trials matched the oracle optimum")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        if args.command == "oracle-check":
            return _cmd_oracle_check(args)
        if args.command == "version":
            print(__version__)
            return 0
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
