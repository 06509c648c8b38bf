"""Config file ingestion: YAML with nested sections, paper-default prefill,
unknown-key rejection, and aggregated semantic validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .metrics import OspaParams
from .models import OFF, Box, ControlGrid, SensingParams, TargetDynamicsParams, db_to_linear
from .sim import ScenarioConfig


class ConfigError(ValueError):
    """Config file could not be parsed or validated."""


# Default scenario: the reference simulation setup (100 m box, 3 agents,
# 30 steps, target always present).
SCENARIO_DEFAULTS: dict = {
    "scenario": {
        "n_steps": 30,
        "master_seed": 1,
        "surveillance_min": [0.0, 0.0, 0.0],
        "surveillance_max": [100.0, 100.0, 100.0],
        "agent_initial_positions": [[30.0, 30.0, 30.0], [20.0, 10.0, 10.0], [10.0, 15.0, 15.0]],
        "target_initial_state": [20.0, 20.0, 20.0, 1.5, 2.0, 1.7],
        "presence": None,  # None -> always present; or intervals / "stochastic"
        "occlusion_motion": "freeze",
        "initial_aim": None,  # None -> target initial position
        "initial_belief": "cued",
        "initial_belief_std": 10.0,
        "initial_existence": 0.9,
    },
    "dynamics": {
        "dt": 1.0,
        "accel_noise_var": 0.5,
        "p_birth": 0.02,
        "p_survive": 0.98,
    },
    "grid": {
        "radial_steps": [1.0, 3.0, 5.0],
        "n_phi": 8,
        "n_theta": 8,
        "include_hover": True,
    },
    "sensing": {
        "p_d_max": 0.95,
        "r0": 6.0,
        "path_loss_exp": 2.0,
        "cone_height": 40.0,
        "cone_angle_deg": 80.0,
        "meas_noise_diag": [0.8, float(np.pi / 50.0), float(np.pi / 50.0)],
        "clutter_rate": 3.0,
        "detection_ratio_domain": "linear",
    },
    "power": {
        "levels_dbw": ["off", -50.0, -7.0, 0.5],
        "tolerance_db": -40.0,
    },
    "filter": {
        "n_particles": 5000,
        "n_birth_particles": 1000,
        "resample_threshold": 0.5,
        "birth_velocity_std": 1.0,
    },
    "fusion": {
        "injection_fraction": 0.5,
    },
    "control": {
        "n_required": 2,
        "n_samples": 10_000,
        "n_iterations": 100,
        "constraints_enabled": True,
        "fallback_policy": "greedy-levels",
        "local_search_neighbors": "nearest",
        "solver_mode": "shared",
    },
    "metrics": {
        "ospa_order": 2.0,
        "ospa_cutoff": 10.0,
        "incident_threshold_db": None,
    },
}

EXPERIMENT_DEFAULTS: dict = {
    "experiment": {
        "kind": "single",
        "n_trials": 20,
        "master_seed": 1,
        "out_dir": "results",
        "spawn_radius": 20.0,
        "n_agents": 3,
        "sweep": None,  # None -> the 8 built-in sweep configurations
    },
}

# Sweep configurations: mobility-control counts {11, 79} crossed with cone
# opening angles {60, 80, 100, 120} degrees.
BUILTIN_SWEEP: list[dict] = [
    {"name": f"cfg{i + 1}", "mobility_controls": m, "cone_angle_deg": a}
    for i, (m, a) in enumerate(
        [(m, a) for m in (11, 79) for a in (60.0, 80.0, 100.0, 120.0)]
    )
]

_SWEEP_ENTRY_KEYS = {"name", "mobility_controls", "cone_angle_deg"}


def grid_for_mobility_count(count: int) -> ControlGrid:
    """Control grids whose deduplicated action counts match the documented
    sweep sizes (11 and 79, hover included)."""
    if count == 11:
        return ControlGrid(radial_steps=[1.0], n_phi=2, n_theta=8, include_hover=True)
    if count == 79:
        return ControlGrid(radial_steps=[1.0, 3.0, 5.0], n_phi=4, n_theta=8, include_hover=True)
    raise ConfigError(f"no grid preset for mobility_controls = {count} (supported: 11, 79)")


def _load_yaml(path) -> dict:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"parse error{where}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")
    return data


def _merge_checked(user: dict, defaults: dict, errors: list[str], prefix: str = "") -> dict:
    """Defaults overlaid with user values; unknown keys are collected."""
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            errors.append(f"unknown key '{prefix}{key}'")
            continue
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = _merge_checked(value, defaults[key], errors, f"{prefix}{key}.")
        else:
            merged[key] = value
    return merged


def _parse_levels(raw, errors: list[str]) -> list[float]:
    levels: list[float] = []
    for item in raw:
        if isinstance(item, str):
            if item.lower() == "off":
                levels.append(OFF)
            else:
                errors.append(f"unrecognized power level '{item}' (use 'off' or a dBW number)")
        else:
            levels.append(float(item))
    return sorted(set(levels))


def scenario_from_dict(user: dict) -> ScenarioConfig:
    """Build a validated ScenarioConfig from a raw (possibly empty) mapping."""
    errors: list[str] = []
    data = _merge_checked(user, SCENARIO_DEFAULTS, errors)
    if errors:
        raise ConfigError("invalid config:\n  - " + "\n  - ".join(errors))

    sc, dy, gr, se, po, fi, fu, co, me = (
        data["scenario"], data["dynamics"], data["grid"], data["sensing"],
        data["power"], data["filter"], data["fusion"], data["control"], data["metrics"],
    )
    try:
        box = Box(sc["surveillance_min"], sc["surveillance_max"])
    except ValueError as exc:
        raise ConfigError(f"invalid config:\n  - {exc}") from exc
    presence = sc["presence"]
    if presence is None:
        presence = [(1, int(sc["n_steps"]))]
    elif isinstance(presence, str):
        pass
    else:
        presence = [(int(a), int(b)) for a, b in presence]
    levels = _parse_levels(po["levels_dbw"], errors)
    if errors:
        raise ConfigError("invalid config:\n  - " + "\n  - ".join(errors))

    agent_positions = np.asarray(sc["agent_initial_positions"], dtype=float)
    n_agents = agent_positions.shape[0] if agent_positions.ndim == 2 else 0
    non_off = [l for l in levels if l != OFF]
    sensing = SensingParams(
        p_d_max=float(se["p_d_max"]),
        r0=float(se["r0"]),
        path_loss_exp=float(se["path_loss_exp"]),
        cone_height=float(se["cone_height"]),
        cone_angle=float(np.deg2rad(se["cone_angle_deg"])),
        meas_noise_cov=np.diag(np.asarray(se["meas_noise_diag"], dtype=float)),
        clutter_rate=float(se["clutter_rate"]),
        max_level_dbw=max(non_off) if non_off else 0.0,
        min_level_dbw=min(non_off) if non_off else 0.0,
        detection_ratio_domain=str(se["detection_ratio_domain"]),
    )
    dynamics = TargetDynamicsParams(
        dt=float(dy["dt"]),
        accel_noise_cov=float(dy["accel_noise_var"]) * np.eye(3),
        p_birth=float(dy["p_birth"]),
        p_survive=float(dy["p_survive"]),
        birth_region=box,
    )
    grid = ControlGrid(
        radial_steps=[float(r) for r in gr["radial_steps"]],
        n_phi=int(gr["n_phi"]),
        n_theta=int(gr["n_theta"]),
        include_hover=bool(gr["include_hover"]),
    )
    threshold = me["incident_threshold_db"]
    cfg = ScenarioConfig(
        box=box,
        n_steps=int(sc["n_steps"]),
        agent_initial_positions=agent_positions,
        target_initial_state=np.asarray(sc["target_initial_state"], dtype=float),
        presence=presence,
        dynamics=dynamics,
        grid=grid,
        level_set=levels,
        sensing=sensing,
        tolerances_w=[db_to_linear(float(po["tolerance_db"]))] * n_agents,
        n_particles=int(fi["n_particles"]),
        n_birth_particles=int(fi["n_birth_particles"]),
        resample_threshold=float(fi["resample_threshold"]),
        birth_velocity_std=float(fi["birth_velocity_std"]),
        injection_fraction=float(fu["injection_fraction"]),
        n_required=int(co["n_required"]),
        n_samples=int(co["n_samples"]),
        n_iterations=int(co["n_iterations"]),
        constraints_enabled=bool(co["constraints_enabled"]),
        fallback_policy=str(co["fallback_policy"]),
        local_search_neighbors=str(co["local_search_neighbors"]),
        solver_mode=str(co["solver_mode"]),
        occlusion_motion=str(sc["occlusion_motion"]),
        initial_aim=None if sc["initial_aim"] is None else np.asarray(sc["initial_aim"], dtype=float),
        initial_belief=str(sc["initial_belief"]),
        initial_belief_std=float(sc["initial_belief_std"]),
        initial_existence=float(sc["initial_existence"]),
        ospa=OspaParams(order=float(me["ospa_order"]), cutoff=float(me["ospa_cutoff"])),
        incident_threshold_w=None if threshold is None else db_to_linear(float(threshold)),
        master_seed=int(sc["master_seed"]),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ScenarioConfig:
    """Load a scenario config file; missing keys take the reference defaults."""
    return scenario_from_dict(_load_yaml(path))


@dataclass
class SweepEntry:
    name: str
    mobility_controls: int
    cone_angle_deg: float


@dataclass
class ExperimentSpec:
    kind: str                  # single | sweep | ablation
    n_trials: int
    master_seed: int
    out_dir: str
    spawn_radius: float
    n_agents: int
    sweep: list[SweepEntry]
    scenario_overrides: dict = field(default_factory=dict)


def load_experiment(path) -> ExperimentSpec:
    """Load an experiment spec: an `experiment` section plus optional
    scenario-section overrides applied to every trial."""
    data = _load_yaml(path)
    errors: list[str] = []
    exp_raw = data.pop("experiment", {})
    if not isinstance(exp_raw, dict):
        raise ConfigError("'experiment' must be a mapping")
    exp = _merge_checked({"experiment": exp_raw}, EXPERIMENT_DEFAULTS, errors)["experiment"]
    # remaining top-level sections are scenario overrides; key-check them now
    if data:
        _merge_checked(data, SCENARIO_DEFAULTS, errors)
    if exp["kind"] not in ("single", "sweep", "ablation"):
        errors.append(f"unknown experiment kind '{exp['kind']}'")
    if int(exp["n_trials"]) < 1:
        errors.append("n_trials must be at least 1")
    sweep_raw = exp["sweep"] if exp["sweep"] is not None else BUILTIN_SWEEP
    sweep = []
    for i, entry in enumerate(sweep_raw):
        extra = set(entry) - _SWEEP_ENTRY_KEYS
        if extra:
            errors.append(f"unknown key 'experiment.sweep[{i}].{sorted(extra)[0]}'")
            continue
        sweep.append(
            SweepEntry(
                name=str(entry.get("name", f"cfg{i + 1}")),
                mobility_controls=int(entry.get("mobility_controls", 79)),
                cone_angle_deg=float(entry.get("cone_angle_deg", 80.0)),
            )
        )
    if errors:
        raise ConfigError("invalid experiment spec:\n  - " + "\n  - ".join(errors))
    return ExperimentSpec(
        kind=str(exp["kind"]),
        n_trials=int(exp["n_trials"]),
        master_seed=int(exp["master_seed"]),
        out_dir=str(exp["out_dir"]),
        spawn_radius=float(exp["spawn_radius"]),
        n_agents=int(exp["n_agents"]),
        sweep=sweep,
        scenario_overrides=data if data else {},
    )
