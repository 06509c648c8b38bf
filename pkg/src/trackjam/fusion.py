"""Team fusion: existence averaging, covariance intersection, and
re-injection of the fused Gaussian into a particle belief."""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .bernoulli import BernoulliBelief


@dataclass
class GaussianEstimate:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape must match the mean dimension")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")


@dataclass
class FusionMessage:
    agent_id: int
    existence: float
    estimate: GaussianEstimate | None = None

    def __post_init__(self):
        if (self.estimate is not None) != (self.existence > 0.5):
            raise ValueError("estimate must be present iff existence > 0.5")


def fuse_existence(existences) -> float:
    """Arithmetic mean of the exchanged existence probabilities."""
    es = list(existences)
    if not es:
        raise ValueError("cannot fuse an empty existence list")
    if any(not 0.0 <= e <= 1.0 for e in es):
        raise ValueError("existence probabilities must lie in [0, 1]")
    return float(sum(es) / len(es))


def _inv_with_jitter(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.inv(cov + 1e-9 * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is singular even after jitter") from exc


def _golden_section_min(f, lo: float, hi: float, tol: float = 1e-9) -> float:
    """Scalar minimizer of a unimodal f over [lo, hi]."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    # the optimum can sit on the boundary of the weight simplex
    candidates = [(f(lo), lo), (f(hi), hi), (f(x), x)]
    return min(candidates)[1]


def _pairwise_ci(a: GaussianEstimate, b: GaussianEstimate, weight_policy) -> GaussianEstimate:
    ia = _inv_with_jitter(a.cov)
    ib = _inv_with_jitter(b.cov)
    if isinstance(weight_policy, (int, float)):
        omega = float(weight_policy)
        if not 0.0 <= omega <= 1.0:
            raise ValueError("fixed CI weight must lie in [0, 1]")
    elif weight_policy == "min-trace":
        omega = _golden_section_min(
            lambda w: float(np.trace(np.linalg.inv(w * ia + (1.0 - w) * ib))), 0.0, 1.0
        )
    else:
        raise ValueError(f"unknown weight policy: {weight_policy!r}")
    info = omega * ia + (1.0 - omega) * ib
    cov = np.linalg.inv(info)
    mean = cov @ (omega * ia @ a.mean + (1.0 - omega) * ib @ b.mean)
    return GaussianEstimate(mean, 0.5 * (cov + cov.T))


def covariance_intersection(estimates, weight_policy="min-trace") -> GaussianEstimate:
    """Fuse Gaussian estimates by covariance intersection.

    A single estimate is returned unchanged. More than two inputs are fused
    sequentially pairwise in list order (callers pass agent-id order), which
    keeps the result deterministic and order-stable.
    """
    ests = list(estimates)
    if not ests:
        raise ValueError("cannot fuse an empty estimate list")
    fused = GaussianEstimate(ests[0].mean.copy(), ests[0].cov.copy())
    for other in ests[1:]:
        fused = _pairwise_ci(fused, other, weight_policy)
    return fused


def inject_fused(
    belief: BernoulliBelief,
    fused_existence: float,
    fused: GaussianEstimate | None,
    fraction: float,
    rng: np.random.Generator,
) -> BernoulliBelief:
    """Overwrite the belief's existence with the fused value and, when a
    fused Gaussian is given, replace the ceil(fraction * n) lowest-weight
    particles with draws from it; the replaced particles' mass is spread
    uniformly over the newcomers."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    states = belief.states.copy()
    weights = belief.weights.copy()
    k = ceil(fraction * belief.n)
    if fused is not None and k > 0:
        idx = np.argsort(weights, kind="stable")[:k]
        replaced_mass = float(weights[idx].sum())
        states[idx] = rng.multivariate_normal(fused.mean, fused.cov, size=k)
        weights[idx] = replaced_mass / k
        total = weights.sum()
        if total > 0.0:
            weights = weights / total
    return BernoulliBelief(float(np.clip(fused_existence, 0.0, 1.0)), states, weights)
