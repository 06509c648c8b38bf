"""Target dynamics, agent control grid, and the power-dependent sensing model.

Conventions used throughout the package:
  * target states are (6,) arrays [x, y, z, vx, vy, vz] (meters, m/s)
  * measurements are rows [rho, theta, phi] (m, rad, rad); a measurement set
    is a (k, 3) array
  * transmit power levels are floats in dBW, with -inf meaning "off"
    (linear watts = 10^(dBW/10), exactly 0 for off)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    SensingCone,
    as_vec3,
    cone_contains,
    cone_contains_many,
    measurement_fn,
    wrap_angle,
    wrap_inclination,
)

OFF = float("-inf")


def db_to_linear(db: float) -> float:
    """dBW -> watts. OFF (-inf) maps to exactly 0 W."""
    return float(10.0 ** (db / 10.0))


def linear_to_db(w: float) -> float:
    """Watts -> dBW. Zero maps to the -inf sentinel; negative power is invalid."""
    if w < 0.0:
        raise ValueError("power must be non-negative")
    if w == 0.0:
        return OFF
    return float(10.0 * np.log10(w))


def is_off(level_dbw: float) -> bool:
    return level_dbw == OFF


@dataclass
class Box:
    """Axis-aligned box, used for the surveillance area and birth region."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = as_vec3(self.lo)
        self.hi = as_vec3(self.hi)
        if np.any(self.hi <= self.lo):
            raise ValueError("box upper bounds must exceed lower bounds")

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def clamp(self, point) -> np.ndarray:
        return np.clip(np.asarray(point, dtype=float), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, 3))


def _cov_sqrt(cov: np.ndarray) -> np.ndarray:
    """Matrix square root of a PSD covariance (Cholesky, falling back to an
    eigendecomposition for singular inputs such as the zero matrix)."""
    cov = np.asarray(cov, dtype=float)
    if np.count_nonzero(cov - np.diag(np.diagonal(cov))) == 0:
        return np.diag(np.sqrt(np.clip(np.diagonal(cov), 0.0, None)))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


@dataclass
class TargetDynamicsParams:
    """Constant-velocity model with white acceleration noise, plus the
    birth/survival probabilities of the present/absent Markov switch."""

    dt: float = 1.0
    accel_noise_cov: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(3))
    p_birth: float = 0.02
    p_survive: float = 0.98
    birth_region: Box | None = None

    def __post_init__(self):
        self.accel_noise_cov = np.asarray(self.accel_noise_cov, dtype=float)
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not (0.0 <= self.p_birth <= 1.0 and 0.0 <= self.p_survive <= 1.0):
            raise ValueError("p_birth and p_survive must lie in [0, 1]")
        if self.accel_noise_cov.shape != (3, 3):
            raise ValueError("accel_noise_cov must be 3x3")
        if not np.allclose(self.accel_noise_cov, self.accel_noise_cov.T):
            raise ValueError("accel_noise_cov must be symmetric")
        self._noise_sqrt = _cov_sqrt(self.accel_noise_cov)

    @property
    def transition_matrix(self) -> np.ndarray:
        dt = self.dt
        phi = np.eye(6)
        phi[:3, 3:] = dt * np.eye(3)
        return phi

    @property
    def noise_gain(self) -> np.ndarray:
        dt = self.dt
        return np.vstack([0.5 * dt * dt * np.eye(3), dt * np.eye(3)])


def target_step(x: np.ndarray, params: TargetDynamicsParams, rng: np.random.Generator) -> np.ndarray:
    """One constant-velocity step with sampled acceleration noise."""
    return target_step_many(np.asarray(x, dtype=float)[None, :], params, rng)[0]


def target_step_many(
    states: np.ndarray, params: TargetDynamicsParams, rng: np.random.Generator
) -> np.ndarray:
    """Propagate an (n, 6) state array one step, one noise draw per row."""
    states = np.asarray(states, dtype=float)
    nu = rng.standard_normal((states.shape[0], 3)) @ params._noise_sqrt.T
    return states @ params.transition_matrix.T + nu @ params.noise_gain.T


def truth_transition(
    state: np.ndarray | None, params: TargetDynamicsParams, rng: np.random.Generator
) -> np.ndarray | None:
    """Stochastic presence transition for the ground-truth target.

    Present targets survive with p_survive and then move; absent targets are
    born with p_birth uniformly over the birth region, with velocity drawn
    from N(0, accel_noise_cov * dt^2).
    """
    if state is not None:
        if rng.uniform() < params.p_survive:
            return target_step(state, params, rng)
        return None
    if rng.uniform() < params.p_birth:
        if params.birth_region is None:
            raise ValueError("birth_region required for stochastic birth")
        pos = params.birth_region.sample(rng, 1)[0]
        vel = rng.standard_normal(3) @ (params._noise_sqrt.T * params.dt)
        return np.concatenate([pos, vel])
    return None


@dataclass
class ControlGrid:
    """Spherical displacement grid of admissible one-step moves."""

    radial_steps: list[float] = field(default_factory=lambda: [1.0, 3.0, 5.0])
    n_phi: int = 8
    n_theta: int = 8
    include_hover: bool = True

    def __post_init__(self):
        if not self.radial_steps or any(r <= 0.0 for r in self.radial_steps):
            raise ValueError("radial_steps must be non-empty and positive")
        if self.n_phi < 1 or self.n_theta < 1:
            raise ValueError("n_phi and n_theta must be at least 1")


def control_displacements(grid: ControlGrid) -> np.ndarray:
    """Unique displacement vectors of the grid (pole duplicates collapsed,
    hover appended last when enabled)."""
    d_phi = np.pi / grid.n_phi
    d_theta = 2.0 * np.pi / grid.n_theta
    out: list[np.ndarray] = []
    seen: set[tuple[float, float, float]] = set()
    for r in grid.radial_steps:
        for l2 in range(grid.n_phi + 1):
            sin_p, cos_p = np.sin(l2 * d_phi), np.cos(l2 * d_phi)
            for l3 in range(1, grid.n_theta + 1):
                d = np.array(
                    [
                        r * sin_p * np.cos(l3 * d_theta),
                        r * sin_p * np.sin(l3 * d_theta),
                        r * cos_p,
                    ]
                )
                key = tuple(np.round(d, 9))
                if key not in seen:
                    seen.add(key)
                    out.append(d)
    if grid.include_hover:
        out.append(np.zeros(3))
    return np.array(out)


def admissible_controls(u, grid: ControlGrid) -> np.ndarray:
    """Candidate next positions reachable from u under the grid, (m, 3)."""
    return as_vec3(u) + control_displacements(grid)


@dataclass
class SensingParams:
    """Detection/jamming model parameters shared by all agents."""

    p_d_max: float = 0.95
    r0: float = 6.0
    path_loss_exp: float = 2.0
    cone_height: float = 40.0
    cone_angle: float = np.deg2rad(80.0)
    meas_noise_cov: np.ndarray = field(
        default_factory=lambda: np.diag([0.8, np.pi / 50.0, np.pi / 50.0])
    )
    clutter_rate: float = 3.0
    max_level_dbw: float = 0.5
    min_level_dbw: float = -50.0
    detection_ratio_domain: str = "linear"

    def __post_init__(self):
        self.meas_noise_cov = np.asarray(self.meas_noise_cov, dtype=float)
        if not 0.0 < self.p_d_max <= 1.0:
            raise ValueError("p_d_max must lie in (0, 1]")
        if self.r0 <= 0.0 or self.path_loss_exp <= 0.0:
            raise ValueError("r0 and path_loss_exp must be positive")
        if self.cone_height <= 0.0 or not 0.0 < self.cone_angle < np.pi:
            raise ValueError("invalid cone parameters")
        if self.meas_noise_cov.shape != (3, 3) or np.any(np.diagonal(self.meas_noise_cov) < 0.0):
            raise ValueError("meas_noise_cov must be a 3x3 PSD diagonal")
        if self.clutter_rate < 0.0:
            raise ValueError("clutter_rate must be non-negative")
        if self.detection_ratio_domain not in ("linear", "normalized_db"):
            raise ValueError("detection_ratio_domain must be 'linear' or 'normalized_db'")
        self._noise_sqrt = np.sqrt(np.clip(np.diagonal(self.meas_noise_cov), 0.0, None))

    @property
    def rho_max(self) -> float:
        """Maximum slant range of the sensing cone (support of clutter rho)."""
        return self.cone_height / np.cos(self.cone_angle / 2.0)

    @property
    def clutter_density(self) -> float:
        """Uniform clutter density over [0, rho_max] x (-pi, pi] x [0, pi]."""
        return 1.0 / (self.rho_max * 2.0 * np.pi * np.pi)

    def power_ratio(self, level_dbw: float) -> float:
        """Transmit-level fraction l/l_max entering the detection model."""
        if is_off(level_dbw):
            return 0.0
        if self.detection_ratio_domain == "linear":
            return db_to_linear(level_dbw) / db_to_linear(self.max_level_dbw)
        span = self.max_level_dbw - self.min_level_dbw
        if span <= 0.0:
            return 1.0
        return float(np.clip((level_dbw - self.min_level_dbw) / span, 0.0, 1.0))


def _range_gain(eta, r0: float, n_e: float):
    """Path-loss factor: 1 inside the reference range, (R0/eta)^n_e beyond."""
    eta = np.asarray(eta, dtype=float)
    safe = np.where(eta > 0.0, eta, 1.0)
    return np.where(eta < r0, 1.0, (r0 / safe) ** n_e)


def detection_prob(target, agent, level_dbw: float, cone: SensingCone, s: SensingParams) -> float:
    """Probability that the agent detects a target at `target`, given its
    transmit level and sensing cone. Zero when off or outside the cone."""
    if is_off(level_dbw) or not cone_contains(cone, target):
        return 0.0
    eta = float(np.linalg.norm(as_vec3(target) - as_vec3(agent)))
    p = s.power_ratio(level_dbw) * s.p_d_max * float(_range_gain(eta, s.r0, s.path_loss_exp))
    return float(np.clip(p, 0.0, s.p_d_max))


def detection_prob_many(
    targets: np.ndarray, agent, level_dbw: float, cone: SensingCone, s: SensingParams
) -> np.ndarray:
    """Vectorized detection_prob over an (n, 3) target array."""
    targets = np.asarray(targets, dtype=float)
    if is_off(level_dbw):
        return np.zeros(targets.shape[0])
    inside = cone_contains_many(cone, targets)
    eta = np.linalg.norm(targets - as_vec3(agent), axis=1)
    p = s.power_ratio(level_dbw) * s.p_d_max * _range_gain(eta, s.r0, s.path_loss_exp)
    return np.clip(np.where(inside, p, 0.0), 0.0, s.p_d_max)


def received_power(point, agent, level_dbw: float, cone: SensingCone, s: SensingParams) -> float:
    """Path-loss received power (W) at `point` from a transmitter at `agent`.
    Zero when off or when the point lies outside the transmit cone."""
    if is_off(level_dbw) or not cone_contains(cone, point):
        return 0.0
    eta = float(np.linalg.norm(as_vec3(point) - as_vec3(agent)))
    return db_to_linear(level_dbw) * float(_range_gain(eta, s.r0, s.path_loss_exp))


def generate_measurements(
    target_state: np.ndarray | None,
    agent,
    level_dbw: float,
    cone: SensingCone,
    s: SensingParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Measurement set for one agent and step: at most one noisy target return
    plus Poisson(clutter_rate) clutter uniform over the measurement space.

    RNG draw order (fixed for reproducibility): detection uniform (iff a
    target state is given), 3 noise normals (iff detected), Poisson count,
    then (k, 3) clutter uniforms.
    """
    rows = []
    if target_state is not None:
        pos = np.asarray(target_state, dtype=float)[:3]
        p_d = detection_prob(pos, agent, level_dbw, cone, s)
        if rng.uniform() < p_d:
            z = np.array(measurement_fn(pos, agent)) + rng.standard_normal(3) * s._noise_sqrt
            rows.append(
                [max(z[0], 0.0), wrap_angle(z[1]), wrap_inclination(z[2])]
            )
    k = int(rng.poisson(s.clutter_rate))
    if k > 0:
        u = rng.uniform(size=(k, 3))
        # theta = pi - u*2pi lands in (-pi, pi] for u in [0, 1)
        clutter = np.column_stack(
            [u[:, 0] * s.rho_max, np.pi - u[:, 1] * 2.0 * np.pi, u[:, 2] * np.pi]
        )
        rows.extend(clutter.tolist())
    if not rows:
        return np.empty((0, 3))
    return np.asarray(rows, dtype=float)
