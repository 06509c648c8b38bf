"""OSPA tracking error, jamming-incident accounting, and power statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SensingCone
from .models import OFF, SensingParams, db_to_linear, received_power


@dataclass
class OspaParams:
    order: float = 2.0
    cutoff: float = 10.0

    def __post_init__(self):
        if self.order < 1.0:
            raise ValueError("order must be at least 1")
        if self.cutoff <= 0.0:
            raise ValueError("cutoff must be positive")


def ospa(truth_set, est_set, params: OspaParams) -> float:
    """Single-target OSPA: 0 for two empty sets, the cutoff on cardinality
    mismatch, and the cutoff-saturated distance for two singletons (the
    order-p metric reduces to min(c, d) in the 1-vs-1 case)."""
    truth = list(truth_set)
    est = list(est_set)
    if len(truth) > 1 or len(est) > 1:
        raise ValueError("single-target metric: sets may hold at most one element")
    if not truth and not est:
        return 0.0
    if len(truth) != len(est):
        return float(params.cutoff)
    d = float(np.linalg.norm(np.asarray(truth[0], dtype=float) - np.asarray(est[0], dtype=float)))
    return min(float(params.cutoff), d)


def pair_received_powers(
    positions: np.ndarray, axes: np.ndarray, levels_dbw: np.ndarray, sensing: SensingParams
) -> np.ndarray:
    """(N, N) matrix of received power at agent i from agent j (0 diagonal)."""
    n = positions.shape[0]
    out = np.zeros((n, n))
    cones = [
        SensingCone(positions[j], axes[j], sensing.cone_height, sensing.cone_angle)
        for j in range(n)
    ]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            out[i, j] = received_power(
                positions[i], positions[j], levels_dbw[j], cones[j], sensing
            )
    return out


def jamming_incidents(trace, threshold_w: float | None = None):
    """Jamming events (t, victim, jammer) where the pairwise received power
    reaches the threshold (default: each victim's interference tolerance).

    Pair powers are recomputed from the recorded positions, axes, and levels,
    so traces read back from CSV are fully supported. Returns (per-victim
    counts, event list).
    """
    sensing = trace.config.sensing
    tol = trace.config.tolerances_w
    n = trace.config.n_agents
    counts = np.zeros(n, dtype=int)
    events: list[tuple[int, int, int]] = []
    for rec in trace.records:
        pairs = pair_received_powers(
            rec.agent_positions, rec.agent_axes, rec.agent_levels_dbw, sensing
        )
        for i in range(n):
            thr = threshold_w if threshold_w is not None else tol[i]
            for j in range(n):
                if i != j and pairs[i, j] >= thr:
                    counts[i] += 1
                    events.append((rec.step, i, j))
    return counts, events


def power_summary(trace) -> dict[str, float]:
    """Per-step arithmetic means: target received power, per-agent received
    interference, and per-agent transmit power (off contributes 0 W)."""
    if not trace.records:
        raise ValueError("cannot summarize an empty trace")
    target = np.mean([rec.target_received_w for rec in trace.records])
    interference = np.mean([np.mean(rec.agent_interference_w) for rec in trace.records])
    transmit = np.mean(
        [
            np.mean([0.0 if l == OFF else db_to_linear(l) for l in rec.agent_levels_dbw])
            for rec in trace.records
        ]
    )
    return {
        "mean_target_received_w": float(target),
        "mean_agent_interference_w": float(interference),
        "mean_transmit_w": float(transmit),
    }
