"""Per-step orchestration of truth, filtering, planning, fusion, and metrics.

One `run_scenario` call executes the full loop for a seeded scenario and
returns an in-memory trace; given the same config (seed included) the trace
is bit-identical between runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bernoulli
from .bernoulli import BernoulliBelief, FilterParams
from .control import (
    all_off_joint,
    distributed_grasp_solve,
    grasp_solve,
    greedy_level_fallback,
    problem_from_grids,
)
from .fusion import FusionMessage, GaussianEstimate, covariance_intersection, fuse_existence, inject_fused
from .geometry import SensingCone, aim_axis, as_vec3
from .metrics import OspaParams, ospa, pair_received_powers
from .models import (
    OFF,
    Box,
    ControlGrid,
    SensingParams,
    TargetDynamicsParams,
    generate_measurements,
    received_power,
    target_step,
    truth_transition,
)

STOCHASTIC = "stochastic"


@dataclass
class ScenarioConfig:
    """Everything a seeded run needs; see config.py for the file format."""

    box: Box
    n_steps: int
    agent_initial_positions: np.ndarray      # (N, 3)
    target_initial_state: np.ndarray         # (6,)
    presence: list[tuple[int, int]] | str    # present intervals, or "stochastic"
    dynamics: TargetDynamicsParams
    grid: ControlGrid
    level_set: list[float]                   # dBW ascending, OFF first
    sensing: SensingParams
    tolerances_w: list[float]
    n_particles: int = 5000
    n_birth_particles: int = 1000
    resample_threshold: float = 0.5
    birth_velocity_std: float = 1.0
    injection_fraction: float = 0.5
    n_required: int = 2
    n_samples: int = 10_000
    n_iterations: int = 100
    constraints_enabled: bool = True
    fallback_policy: str = "greedy-levels"   # or "all-off"
    local_search_neighbors: str = "nearest"  # or "random"
    solver_mode: str = "shared"              # or "per-agent"
    occlusion_motion: str = "freeze"         # or "continue"
    initial_aim: np.ndarray | None = None    # default: target initial position
    initial_belief: str = "cued"             # or "uniform"
    initial_belief_std: float = 10.0         # position std of the cued cloud
    initial_existence: float = 0.9
    ospa: OspaParams = field(default_factory=OspaParams)
    incident_threshold_w: float | None = None
    master_seed: int = 1

    @property
    def n_agents(self) -> int:
        return int(np.asarray(self.agent_initial_positions).shape[0])

    def validate(self) -> None:
        """Raise ValueError listing every violated constraint."""
        errs: list[str] = []
        pos = np.asarray(self.agent_initial_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            errs.append("agent_initial_positions must be a non-empty (N, 3) array")
        elif not np.all(self.box.contains_many(pos)):
            errs.append("agent initial positions must lie inside the surveillance box")
        if np.asarray(self.target_initial_state).shape != (6,):
            errs.append("target_initial_state must be a 6-vector")
        if self.n_steps < 1:
            errs.append("n_steps must be at least 1")
        if isinstance(self.presence, str):
            if self.presence != STOCHASTIC:
                errs.append(f"presence must be intervals or '{STOCHASTIC}'")
        else:
            last_end = 0
            for start, end in sorted(self.presence):
                if start < 1 or end > self.n_steps or start > end:
                    errs.append(f"presence interval [{start}, {end}] outside [1, {self.n_steps}]")
                if start <= last_end:
                    errs.append(f"presence intervals overlap at step {start}")
                last_end = max(last_end, end)
        if len(self.level_set) < 1:
            errs.append("level_set must not be empty")
        if sorted(self.level_set) != list(self.level_set):
            errs.append("level_set must be ascending")
        if len(self.tolerances_w) != self.n_agents:
            errs.append("tolerances_w must have one entry per agent")
        elif any(t <= 0.0 for t in self.tolerances_w):
            errs.append("interference tolerances must be positive")
        if not 1 <= self.n_required <= self.n_agents:
            errs.append("n_required must lie in [1, n_agents]")
        if self.n_samples < 1 or self.n_iterations < 1:
            errs.append("n_samples and n_iterations must be at least 1")
        if self.fallback_policy not in ("greedy-levels", "all-off"):
            errs.append("fallback_policy must be 'greedy-levels' or 'all-off'")
        if self.local_search_neighbors not in ("nearest", "random"):
            errs.append("local_search_neighbors must be 'nearest' or 'random'")
        if self.solver_mode not in ("shared", "per-agent"):
            errs.append("solver_mode must be 'shared' or 'per-agent'")
        if self.occlusion_motion not in ("freeze", "continue"):
            errs.append("occlusion_motion must be 'freeze' or 'continue'")
        if self.initial_belief not in ("cued", "uniform"):
            errs.append("initial_belief must be 'cued' or 'uniform'")
        if self.initial_belief_std <= 0.0:
            errs.append("initial_belief_std must be positive")
        if not 0.0 <= self.injection_fraction <= 1.0:
            errs.append("injection_fraction must lie in [0, 1]")
        if not 0.0 <= self.initial_existence <= 1.0:
            errs.append("initial_existence must lie in [0, 1]")
        if errs:
            raise ValueError("invalid scenario config:\n  - " + "\n  - ".join(errs))

    def scheduled_present(self, step: int) -> bool:
        if isinstance(self.presence, str):
            raise ValueError("presence is stochastic, not scheduled")
        return any(start <= step <= end for start, end in self.presence)


@dataclass
class RngStreams:
    """Independent Philox streams keyed by (master_seed, stream index):
    one per agent, then truth, then the solver."""

    agents: list[np.random.Generator]
    truth: np.random.Generator
    solver: np.random.Generator


def _keyed_stream(master_seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def derive_rng_streams(master_seed: int, n_agents: int) -> RngStreams:
    """n_agents + 2 independent counter-based streams; the derivation is
    keyed, so stream contents do not depend on creation or use order."""
    return RngStreams(
        agents=[_keyed_stream(master_seed, j) for j in range(n_agents)],
        truth=_keyed_stream(master_seed, n_agents),
        solver=_keyed_stream(master_seed, n_agents + 1),
    )


def solver_substreams(master_seed: int, n_agents: int) -> list[np.random.Generator]:
    """Per-agent solver streams for the distributed ('per-agent') mode."""
    return [_keyed_stream(master_seed, n_agents + 2 + j) for j in range(n_agents)]


def message_bus_round(payloads: list, n_agents: int | None = None) -> list[list]:
    """Synchronous lossless broadcast: agent i's inbox holds every other
    agent's payload as (sender_id, payload), in ascending sender order."""
    n = len(payloads)
    if n_agents is not None and n != n_agents:
        raise ValueError(f"expected {n_agents} payloads, got {n}")
    if any(p is None for p in payloads):
        raise ValueError("missing payload")
    return [[(j, payloads[j]) for j in range(n) if j != i] for i in range(n)]


@dataclass
class AgentContext:
    agent_id: int
    position: np.ndarray
    axis: np.ndarray
    level_dbw: float
    belief: BernoulliBelief
    rng: np.random.Generator


@dataclass
class StepRecord:
    step: int
    truth_present: bool
    truth_state: np.ndarray
    agent_positions: np.ndarray
    agent_levels_dbw: np.ndarray
    agent_axes: np.ndarray
    agent_existence: np.ndarray
    agent_estimates: list[np.ndarray | None]
    agent_interference_w: np.ndarray
    agent_n_measurements: np.ndarray
    fused_existence: float
    fused_estimate: np.ndarray | None
    target_received_w: float
    ospa_m: float
    planner_solved: bool | None  # None when the trace was read back from CSV


@dataclass
class Trace:
    config: ScenarioConfig
    records: list[StepRecord]


def _initial_axis(position: np.ndarray, aim_point: np.ndarray) -> np.ndarray:
    if np.array_equal(position, aim_point):
        return np.array([0.0, 0.0, 1.0])
    return aim_axis(position, aim_point)


def run_scenario(cfg: ScenarioConfig) -> Trace:
    """Execute the scenario and return its trace. Deterministic in cfg."""
    cfg.validate()
    n = cfg.n_agents
    streams = derive_rng_streams(cfg.master_seed, n)
    solver_rngs = solver_substreams(cfg.master_seed, n) if cfg.solver_mode == "per-agent" else None

    fparams = FilterParams(
        dynamics=cfg.dynamics,
        sensing=cfg.sensing,
        surveillance_box=cfg.box,
        n_particles=cfg.n_particles,
        n_birth_particles=cfg.n_birth_particles,
        resample_threshold=cfg.resample_threshold,
        birth_velocity_std=cfg.birth_velocity_std,
    )
    aim_point = (
        as_vec3(cfg.initial_aim)
        if cfg.initial_aim is not None
        else np.asarray(cfg.target_initial_state, dtype=float)[:3]
    )
    cue = aim_point if cfg.initial_belief == "cued" else None
    agents = [
        AgentContext(
            agent_id=j,
            position=np.asarray(cfg.agent_initial_positions[j], dtype=float).copy(),
            axis=_initial_axis(np.asarray(cfg.agent_initial_positions[j], dtype=float), aim_point),
            level_dbw=OFF,
            belief=bernoulli.initial_belief(
                fparams, streams.agents[j], cfg.initial_existence, cue, cfg.initial_belief_std
            ),
            rng=streams.agents[j],
        )
        for j in range(n)
    ]

    truth_state = np.asarray(cfg.target_initial_state, dtype=float).copy()
    stochastic = isinstance(cfg.presence, str)
    present = stochastic  # stochastic runs start with the target present
    records: list[StepRecord] = []

    for step in range(1, cfg.n_steps + 1):
        # (1) truth evolution
        if stochastic:
            nxt = truth_transition(truth_state if present else None, cfg.dynamics, streams.truth)
            present = nxt is not None
            if present:
                truth_state = nxt
        else:
            now_present = cfg.scheduled_present(step)
            if now_present or cfg.occlusion_motion == "continue":
                truth_state = target_step(truth_state, cfg.dynamics, streams.truth)
            present = now_present
        if present:
            truth_state[:3] = cfg.box.clamp(truth_state[:3])

        # (2) per-agent prediction and provisional estimates
        pred_estimates: list[tuple[np.ndarray, np.ndarray] | None] = []
        for ag in agents:
            ag.belief = bernoulli.predict(ag.belief, fparams, ag.rng)
            pred_estimates.append(bernoulli.point_estimate(ag.belief))

        # (3) exchange previous positions and provisional estimates
        payloads = [
            (agents[j].position.copy(), pred_estimates[j]) for j in range(n)
        ]
        message_bus_round(payloads, n)

        # (4) shared predicted target position (mean over believing agents)
        available = [est[0][:3] for est in pred_estimates if est is not None]
        x_bar = np.mean(available, axis=0) if available else None

        prob = problem_from_grids(
            prev_positions=[ag.position for ag in agents],
            grid=cfg.grid,
            level_set=cfg.level_set,
            target_estimate=x_bar,
            n_required=cfg.n_required,
            tolerances_w=cfg.tolerances_w,
            sensing=cfg.sensing,
            prev_axes=[ag.axis for ag in agents],
            box=cfg.box,
            constraints_enabled=cfg.constraints_enabled,
        )

        # (5) plan
        if x_bar is not None:
            if solver_rngs is not None:
                joint = distributed_grasp_solve(
                    prob, cfg.n_samples, cfg.n_iterations, solver_rngs, cfg.local_search_neighbors
                )
            else:
                joint = grasp_solve(
                    prob, cfg.n_samples, cfg.n_iterations, streams.solver, cfg.local_search_neighbors
                )
            planner_solved = True
        else:
            joint = greedy_level_fallback(prob) if cfg.fallback_policy == "greedy-levels" else all_off_joint(prob)
            planner_solved = False

        # (6) apply moves, levels, and antenna aims
        for j, ag in enumerate(agents):
            ag.position = joint.actions[j].position.copy()
            ag.level_dbw = joint.actions[j].level_dbw
            if x_bar is not None and not np.array_equal(ag.position, x_bar):
                ag.axis = aim_axis(ag.position, x_bar)

        # (7) + (8) measure from the true state, then update
        n_meas = np.zeros(n, dtype=int)
        for j, ag in enumerate(agents):
            cone = SensingCone(ag.position, ag.axis, cfg.sensing.cone_height, cfg.sensing.cone_angle)
            target_for_sensor = truth_state if present else None
            y = generate_measurements(
                target_for_sensor, ag.position, ag.level_dbw, cone, cfg.sensing, ag.rng
            )
            n_meas[j] = y.shape[0]
            ag.belief = bernoulli.update(ag.belief, y, ag.position, ag.level_dbw, cone, fparams, ag.rng)

        # (9) fusion round
        messages = []
        for j, ag in enumerate(agents):
            pe = bernoulli.point_estimate(ag.belief)
            est = GaussianEstimate(pe[0], pe[1]) if pe is not None else None
            messages.append(FusionMessage(j, ag.belief.existence, est))
        fused_e = fuse_existence([m.existence for m in messages])
        contributing = [m.estimate for m in messages if m.estimate is not None]
        fused_est = covariance_intersection(contributing) if contributing else None
        post_existence = np.array([m.existence for m in messages])
        post_estimates = [m.estimate.mean.copy() if m.estimate is not None else None for m in messages]
        for ag in agents:
            ag.belief = inject_fused(ag.belief, fused_e, fused_est, cfg.injection_fraction, ag.rng)

        # (10) metrics and record
        positions = np.array([ag.position for ag in agents])
        axes = np.array([ag.axis for ag in agents])
        levels = np.array([ag.level_dbw for ag in agents])
        pairs = pair_received_powers(positions, axes, levels, cfg.sensing)
        interference = pairs.sum(axis=1)
        if present:
            cones = [
                SensingCone(positions[j], axes[j], cfg.sensing.cone_height, cfg.sensing.cone_angle)
                for j in range(n)
            ]
            target_received = float(
                sum(
                    received_power(truth_state[:3], positions[j], levels[j], cones[j], cfg.sensing)
                    for j in range(n)
                )
            )
        else:
            target_received = 0.0
        truth_set = [truth_state[:3].copy()] if present else []
        est_set = (
            [fused_est.mean[:3].copy()] if (fused_est is not None and fused_e > 0.5) else []
        )
        records.append(
            StepRecord(
                step=step,
                truth_present=present,
                truth_state=truth_state.copy(),
                agent_positions=positions,
                agent_levels_dbw=levels,
                agent_axes=axes,
                agent_existence=post_existence,
                agent_estimates=post_estimates,
                agent_interference_w=interference,
                agent_n_measurements=n_meas,
                fused_existence=float(fused_e),
                fused_estimate=fused_est.mean.copy() if fused_est is not None else None,
                target_received_w=target_received,
                ospa_m=float(ospa(truth_set, est_set, cfg.ospa)),
                planner_solved=planner_solved,
            )
        )

    return Trace(config=cfg, records=records)
