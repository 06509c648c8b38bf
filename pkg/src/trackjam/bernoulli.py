"""Per-agent Bernoulli particle filter over target existence and state.

The belief is (existence probability, weighted particle set). Prediction
mixes surviving mass with uniform birth mass; the update folds in the
detection/clutter measurement model and renormalizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SensingCone, as_vec3, measurement_fn_many, wrap_angle
from .models import Box, SensingParams, TargetDynamicsParams, detection_prob_many, target_step_many

# Floor applied to the clutter rate inside likelihood ratios; keeps the
# update defined for lambda_c = 0 without affecting realistic rates.
CLUTTER_RATE_FLOOR = 1e-6

# q_t can brush against 1 through particle noise; cap it below the pole of
# the existence ratio.
_Q_CAP = 1.0 - 1e-12


@dataclass
class BernoulliBelief:
    existence: float
    states: np.ndarray   # (n, 6)
    weights: np.ndarray  # (n,), normalized

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 6)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.states.shape[0] != self.weights.shape[0]:
            raise ValueError("states and weights must have matching lengths")
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError("existence must lie in [0, 1]")
        if self.weights.size and abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    @property
    def n(self) -> int:
        return self.states.shape[0]


@dataclass
class FilterParams:
    dynamics: TargetDynamicsParams
    sensing: SensingParams
    surveillance_box: Box
    n_particles: int = 5000
    n_birth_particles: int = 1000
    resample_threshold: float = 0.5
    birth_velocity_std: float = 1.0

    def __post_init__(self):
        if self.n_particles <= 0 or self.n_birth_particles < 0:
            raise ValueError("particle counts must be positive")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must lie in (0, 1]")


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def resample_systematic(
    states: np.ndarray,
    weights: np.ndarray,
    rng: np.random.Generator,
    n_out: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Systematic resampling: one uniform offset, evenly spaced quantiles.

    Returns an equal-weight set of n_out particles (defaults to the input
    cardinality); the copy count of particle i differs from n_out * w_i by
    at most 1.
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    if n == 0:
        raise ValueError("cannot resample an empty particle set")
    if n_out is None:
        n_out = n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    points = (rng.uniform() + np.arange(n_out)) / n_out
    idx = np.searchsorted(cum, points, side="left")
    return np.asarray(states)[idx].copy(), np.full(n_out, 1.0 / n_out)


def initial_belief(
    params: FilterParams,
    rng: np.random.Generator,
    existence: float = 0.5,
    cue_center: np.ndarray | None = None,
    cue_std: float = 10.0,
) -> BernoulliBelief:
    """Starting belief: uniform positions over the box, or a Gaussian cloud
    around a cue point (the spawn location the team was dispatched to);
    velocities are N(0, birth_velocity_std^2) either way."""
    if cue_center is None:
        pos = params.surveillance_box.sample(rng, params.n_particles)
    else:
        pos = np.asarray(cue_center, dtype=float) + rng.standard_normal(
            (params.n_particles, 3)
        ) * cue_std
        pos = np.clip(pos, params.surveillance_box.lo, params.surveillance_box.hi)
    vel = rng.standard_normal((params.n_particles, 3)) * params.birth_velocity_std
    w = np.full(params.n_particles, 1.0 / params.n_particles)
    return BernoulliBelief(existence, np.hstack([pos, vel]), w)


def predict(b: BernoulliBelief, p: FilterParams, rng: np.random.Generator) -> BernoulliBelief:
    """Prediction step: propagate survivors, append birth particles.

    existence' = p_b (1 - e) + p_s e; surviving weights carry mass
    p_s e / existence' and the appended birth particles carry the
    complementary p_b (1 - e) / existence'.
    """
    dyn = p.dynamics
    e = b.existence
    e_pred = dyn.p_birth * (1.0 - e) + dyn.p_survive * e
    states = target_step_many(b.states, dyn, rng) if b.n else b.states.copy()
    if e_pred == 0.0:
        # No survival or birth mass: null belief; keep the (arbitrary)
        # spatial density well-formed.
        return BernoulliBelief(0.0, states, b.weights.copy())
    surv_mass = dyn.p_survive * e / e_pred
    birth_mass = dyn.p_birth * (1.0 - e) / e_pred
    weights = b.weights * surv_mass
    if p.n_birth_particles > 0:
        pos = p.surveillance_box.sample(rng, p.n_birth_particles)
        vel = rng.standard_normal((p.n_birth_particles, 3)) * p.birth_velocity_std
        births = np.hstack([pos, vel])
        bw = np.full(p.n_birth_particles, birth_mass / p.n_birth_particles)
        states = np.vstack([states, births]) if states.size else births
        weights = np.concatenate([weights, bw])
    total = weights.sum()
    if total <= 0.0:
        weights = np.full(weights.size, 1.0 / max(weights.size, 1))
    else:
        weights = weights / total
    return BernoulliBelief(min(max(e_pred, 0.0), 1.0), states, weights)


def measurement_likelihoods(
    states: np.ndarray, measurements: np.ndarray, agent, s: SensingParams
) -> np.ndarray:
    """Gaussian measurement likelihood g(y | x, u) as an (n, k) matrix.

    The azimuth residual is wrapped to (-pi, pi] before entering the
    quadratic form; variances are the diagonal of meas_noise_cov.
    """
    var = np.diagonal(s.meas_noise_cov)
    if np.any(var <= 0.0):
        raise ValueError("measurement noise variances must be positive for likelihoods")
    h = measurement_fn_many(np.asarray(states)[:, :3], agent)  # (n, 3)
    y = np.asarray(measurements, dtype=float).reshape(-1, 3)
    d_rho = y[None, :, 0] - h[:, 0, None]
    d_theta = wrap_angle(y[None, :, 1] - h[:, 1, None])
    d_phi = y[None, :, 2] - h[:, 2, None]
    quad = d_rho**2 / var[0] + d_theta**2 / var[1] + d_phi**2 / var[2]
    norm = (2.0 * np.pi) ** 1.5 * np.sqrt(np.prod(var))
    return np.exp(-0.5 * quad) / norm


def update_existence_and_weights(
    e_pred: float,
    weights: np.ndarray,
    p_d: np.ndarray,
    clutter_ratio_sum: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Core Bernoulli update given per-particle detection probabilities and
    the summed likelihood-to-clutter ratios Lambda_i = sum_y g(y|x_i)/(lc pc).

    q = sum_i w_i p_d_i (1 - Lambda_i); existence and weights follow the
    Bernoulli recursion with q capped just below 1.
    """
    w = np.asarray(weights, dtype=float)
    p_d = np.asarray(p_d, dtype=float)
    lam = np.asarray(clutter_ratio_sum, dtype=float)
    q = float(np.sum(w * p_d * (1.0 - lam)))
    q = min(q, _Q_CAP)
    existence = (1.0 - q) * e_pred / (1.0 - e_pred * q)
    existence = float(np.clip(existence, 0.0, 1.0))
    new_w = w * ((1.0 - p_d) + p_d * lam)
    total = new_w.sum()
    if total <= 0.0:
        new_w = np.full(w.size, 1.0 / max(w.size, 1))
    else:
        new_w = new_w / total
    return existence, new_w


def update(
    b_pred: BernoulliBelief,
    measurements: np.ndarray,
    agent,
    level_dbw: float,
    cone: SensingCone,
    p: FilterParams,
    rng: np.random.Generator,
) -> BernoulliBelief:
    """Measurement update under the post-move sensing configuration that
    generated `measurements`, followed by systematic resampling when the
    particle count exceeds n_particles or the ESS falls below threshold."""
    agent = as_vec3(agent)
    y = np.asarray(measurements, dtype=float).reshape(-1, 3)
    p_d = detection_prob_many(b_pred.states[:, :3], agent, level_dbw, cone, p.sensing)
    if y.shape[0]:
        g = measurement_likelihoods(b_pred.states, y, agent, p.sensing)
        lam_c = max(p.sensing.clutter_rate, CLUTTER_RATE_FLOOR)
        clutter_ratio_sum = g.sum(axis=1) / (lam_c * p.sensing.clutter_density)
    else:
        clutter_ratio_sum = np.zeros(b_pred.n)
    existence, weights = update_existence_and_weights(
        b_pred.existence, b_pred.weights, p_d, clutter_ratio_sum
    )
    states = b_pred.states
    n = weights.size
    if n > p.n_particles or effective_sample_size(weights) < p.resample_threshold * n:
        states, weights = resample_systematic(states, weights, rng, min(n, p.n_particles))
    return BernoulliBelief(existence, states, weights)


def point_estimate(b: BernoulliBelief) -> tuple[np.ndarray, np.ndarray] | None:
    """Weighted mean and covariance of the particle set, defined only when
    existence exceeds 0.5; covariance is symmetrized and jittered when it is
    not comfortably positive definite."""
    if b.existence <= 0.5 or b.n == 0:
        return None
    mean = b.weights @ b.states
    centered = b.states - mean
    cov = (centered * b.weights[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() < 1e-12:
        cov = cov + 1e-9 * np.eye(6)
    return mean, cov
