"""Experiment drivers: repeated seeded trials with random spawn geometry,
per-trial trace CSVs, and an aggregated summary.

Three kinds: `single` (re-run the configured scenario), `sweep` (grid of
mobility-control counts x cone opening angles), and `ablation` (paired
trials with interference constraints enabled vs disabled, sharing seeds).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentSpec, grid_for_mobility_count, scenario_from_dict
from .metrics import jamming_incidents, power_summary
from .sim import Trace, _keyed_stream, run_scenario
from .traceio import read_trace_csv, write_trace_csv

# Stream index for spawn-geometry draws, disjoint from the simulation streams.
SPAWN_STREAM_INDEX = 10_000


@dataclass
class ExperimentResult:
    out_dir: Path
    summary_path: Path
    trace_paths: dict[str, list[Path]]  # configuration name -> per-trial paths


def sample_spawn(
    box, n_agents: int, radius: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Target uniform in the box (velocity ~ N(0, 1) per axis); agents uniform
    inside the radius-`radius` ball around it, clamped into the box."""
    target_pos = box.sample(rng, 1)[0]
    target_vel = rng.standard_normal(3)
    directions = rng.standard_normal((n_agents, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = radius * rng.uniform(size=n_agents) ** (1.0 / 3.0)
    agents = np.array([box.clamp(target_pos + radii[k] * directions[k]) for k in range(n_agents)])
    return np.concatenate([target_pos, target_vel]), agents


def _trial_overrides(base: dict, seed: int, spawn_radius: float, n_agents: int) -> dict:
    """Clone the scenario overrides and inject the trial seed plus randomly
    spawned geometry (antennas aimed at the spawn-sphere center)."""
    over = copy.deepcopy(base)
    scenario = over.setdefault("scenario", {})
    probe = scenario_from_dict(copy.deepcopy(base))
    rng = _keyed_stream(seed, SPAWN_STREAM_INDEX)
    target_state, agent_positions = sample_spawn(probe.box, n_agents, spawn_radius, rng)
    scenario["master_seed"] = seed
    scenario["target_initial_state"] = [float(v) for v in target_state]
    scenario["agent_initial_positions"] = [[float(v) for v in row] for row in agent_positions]
    scenario["initial_aim"] = [float(v) for v in target_state[:3]]
    return over


def _trace_metrics(trace: Trace) -> dict[str, float]:
    out = power_summary(trace)
    out["mean_ospa_m"] = float(np.mean([rec.ospa_m for rec in trace.records]))
    counts, _ = jamming_incidents(trace, trace.config.incident_threshold_w)
    out["jamming_incidents_per_agent"] = float(counts.sum() / trace.config.n_agents)
    return out


def run_experiment(spec: ExperimentSpec, out_dir=None) -> ExperimentResult:
    """Run every (configuration, trial) pair, write per-trial trace CSVs, and
    aggregate a summary with one (configuration, metric, value) row per line.

    Trial seeds are master_seed + trial index; the summary records them for
    replay. Summary metrics are recomputed from the written CSVs, so they are
    exactly reproducible from the artifacts alone.
    """
    out = Path(out_dir if out_dir is not None else spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configurations = _configurations(spec)
    trace_paths: dict[str, list[Path]] = {name: [] for name, _ in configurations}
    seeds: dict[str, list[int]] = {name: [] for name, _ in configurations}

    for trial in range(spec.n_trials):
        seed = spec.master_seed + trial
        shared_spawn: dict[str, dict] = {}
        for name, overrides in configurations:
            if spec.kind == "ablation":
                # paired runs share the trial's spawn and seed
                key = "shared"
                if key not in shared_spawn:
                    shared_spawn[key] = _trial_overrides(
                        overrides, seed, spec.spawn_radius, spec.n_agents
                    )
                trial_over = copy.deepcopy(shared_spawn[key])
                trial_over.setdefault("control", {})["constraints_enabled"] = name == "enabled"
            elif spec.kind == "sweep":
                trial_over = _trial_overrides(overrides, seed, spec.spawn_radius, spec.n_agents)
            else:
                trial_over = copy.deepcopy(overrides)
                trial_over.setdefault("scenario", {})["master_seed"] = seed
            cfg = scenario_from_dict(trial_over)
            trace = run_scenario(cfg)
            path = out / f"{name}_trial{trial:03d}.csv"
            write_trace_csv(trace, path)
            trace_paths[name].append(path)
            seeds[name].append(seed)

    summary_path = out / "summary.csv"
    _write_summary(summary_path, spec, configurations, trace_paths, seeds)
    return ExperimentResult(out_dir=out, summary_path=summary_path, trace_paths=trace_paths)


def _configurations(spec: ExperimentSpec) -> list[tuple[str, dict]]:
    base = copy.deepcopy(spec.scenario_overrides)
    if spec.kind == "single":
        return [("single", base)]
    if spec.kind == "ablation":
        return [("enabled", copy.deepcopy(base)), ("disabled", copy.deepcopy(base))]
    configs = []
    for entry in spec.sweep:
        over = copy.deepcopy(base)
        grid = grid_for_mobility_count(entry.mobility_controls)
        over.setdefault("grid", {}).update(
            {
                "radial_steps": list(grid.radial_steps),
                "n_phi": grid.n_phi,
                "n_theta": grid.n_theta,
                "include_hover": grid.include_hover,
            }
        )
        over.setdefault("sensing", {})["cone_angle_deg"] = entry.cone_angle_deg
        configs.append((entry.name, over))
    return configs


def summarize_traces(paths: list[Path], overrides: dict, n_agents: int) -> dict[str, float]:
    """Mean metrics over a configuration's trials, recomputed from its CSVs.

    The per-trial spawn geometry never enters metric recomputation, so the
    reconstruction config only needs the right agent count and parameters.
    """
    recon = copy.deepcopy(overrides)
    probe = scenario_from_dict(copy.deepcopy(overrides))
    center = 0.5 * (probe.box.lo + probe.box.hi)
    recon.setdefault("scenario", {})["agent_initial_positions"] = [
        [float(c) for c in center]
    ] * n_agents
    cfg = scenario_from_dict(recon)
    per_metric: dict[str, list[float]] = {}
    for path in paths:
        trace = read_trace_csv(path, cfg)
        for metric, value in _trace_metrics(trace).items():
            per_metric.setdefault(metric, []).append(value)
    return {metric: float(np.mean(vals)) for metric, vals in per_metric.items()}


def _write_summary(path: Path, spec, configurations, trace_paths, seeds) -> None:
    lines = ["configuration,metric,value"]
    for name, overrides in configurations:
        if spec.kind == "single":
            n_agents = scenario_from_dict(copy.deepcopy(overrides)).n_agents
        else:
            n_agents = spec.n_agents
        metrics = summarize_traces(trace_paths[name], overrides, n_agents)
        for metric in sorted(metrics):
            lines.append(f"{name},{metric},{repr(metrics[metric])}")
        for trial, seed in enumerate(seeds[name]):
            lines.append(f"{name},trial{trial:03d}_seed,{seed}")
    path.write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    for line in Path(path).read_text().splitlines()[1:]:
        name, metric, value = line.split(",")
        out[(name, metric)] = float(value)
    return out
