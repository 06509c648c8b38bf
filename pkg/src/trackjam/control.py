"""Joint detection objective, interference constraints, and the GRASP solver.

The team objective is the Poisson-binomial tail probability that at least n
of the N agents detect the target at the shared predicted position, maximized
over each agent's (move, transmit level) pairs subject to pairwise received
interference staying below each agent's tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SensingCone, aim_axis, as_vec3
from .models import (
    OFF,
    ControlGrid,
    SensingParams,
    admissible_controls,
    db_to_linear,
    detection_prob,
    is_off,
    received_power,
)

# ---------------------------------------------------------------------------
# Poisson-binomial machinery


def poisson_binomial_pmf(probs) -> np.ndarray:
    """Full pmf over 0..N successes via the stable DP recurrence."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError("probabilities must be a 1-D sequence")
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    pmf = np.zeros(p.size + 1)
    pmf[0] = 1.0
    for pi in p:
        pmf[1:] = pmf[1:] * (1.0 - pi) + pmf[:-1] * pi
        pmf[0] *= 1.0 - pi
    return pmf


def xi_exactly_m(probs, m: int) -> float:
    """Probability that exactly m of the independent detections fire."""
    p = np.asarray(probs, dtype=float)
    if not 0 <= m <= p.size:
        raise ValueError("m must lie in [0, N]")
    return float(poisson_binomial_pmf(p)[m])


def objective_at_least_n(probs, n: int) -> float:
    """Probability that at least n of the independent detections fire."""
    p = np.asarray(probs, dtype=float)
    if n <= 0:
        return 1.0
    if n > p.size:
        return 0.0
    return float(poisson_binomial_pmf(p)[n:].sum())


def _at_least_n_batch(probs: np.ndarray, n: int) -> np.ndarray:
    """Vectorized tail probability: probs is (N, B), returns (B,)."""
    n_agents, batch = probs.shape
    if n <= 0:
        return np.ones(batch)
    dp = np.zeros((batch, n_agents + 1))
    dp[:, 0] = 1.0
    for j in range(n_agents):
        p = probs[j][:, None]
        dp[:, 1:] = dp[:, 1:] * (1.0 - p) + dp[:, :-1] * p
        dp[:, 0] *= 1.0 - probs[j]
    return dp[:, n:].sum(axis=1)


# ---------------------------------------------------------------------------
# Problem container


@dataclass
class CandidateAction:
    position: np.ndarray
    level_dbw: float

    def __post_init__(self):
        self.position = as_vec3(self.position)


@dataclass
class JointControl:
    actions: list[CandidateAction]

    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.actions])

    def levels(self) -> list[float]:
        return [a.level_dbw for a in self.actions]


@dataclass
class ControlProblem:
    """One step's joint control problem for the whole team.

    Candidate positions are the (box-filtered) admissible moves from each
    agent's previous position; hypothesized sensing cones aim at the shared
    target estimate from the hypothesized position, falling back to the
    agent's previous axis when the estimate is undefined or coincident.
    """

    prev_positions: list[np.ndarray]
    candidate_positions: list[np.ndarray]   # per agent, (m_j, 3)
    level_sets: list[list[float]]           # per agent, dBW ascending (OFF first)
    target_estimate: np.ndarray | None
    n_required: int
    tolerances_w: list[float]
    sensing: SensingParams
    prev_axes: list[np.ndarray]
    constraints_enabled: bool = True
    _pd_tables: list[np.ndarray] = field(default_factory=list, repr=False)
    _gain_tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.prev_positions = [as_vec3(p) for p in self.prev_positions]
        self.prev_axes = [as_vec3(a) for a in self.prev_axes]
        if self.target_estimate is not None:
            self.target_estimate = as_vec3(self.target_estimate)
        self.candidate_positions = [
            np.asarray(c, dtype=float).reshape(-1, 3) for c in self.candidate_positions
        ]
        n = self.n_agents
        if not (
            len(self.candidate_positions) == len(self.level_sets)
            == len(self.tolerances_w) == len(self.prev_axes) == n
        ):
            raise ValueError("per-agent field lengths must match")
        if not 1 <= self.n_required <= n:
            raise ValueError("n_required must lie in [1, N]")
        if any(t <= 0.0 for t in self.tolerances_w):
            raise ValueError("interference tolerances must be positive")

    @property
    def n_agents(self) -> int:
        return len(self.prev_positions)

    def n_levels(self, j: int) -> int:
        return len(self.level_sets[j])

    def n_actions(self, j: int) -> int:
        return self.candidate_positions[j].shape[0] * self.n_levels(j)

    # -- hypothesized antenna axes -----------------------------------------

    def candidate_axes(self, j: int) -> np.ndarray:
        """Unit axis per candidate position of agent j (aimed at the target
        estimate; previous axis where that aim is undefined)."""
        cands = self.candidate_positions[j]
        if self.target_estimate is None:
            return np.tile(self.prev_axes[j], (cands.shape[0], 1))
        d = self.target_estimate - cands
        norms = np.linalg.norm(d, axis=1)
        safe = np.where(norms == 0.0, 1.0, norms)
        return np.where(norms[:, None] > 0.0, d / safe[:, None], self.prev_axes[j])

    def _axis_for(self, j: int, position: np.ndarray) -> np.ndarray:
        if self.target_estimate is None or np.array_equal(self.target_estimate, position):
            return self.prev_axes[j]
        return aim_axis(position, self.target_estimate)

    # -- cached lookup tables ----------------------------------------------

    def pd_table(self, j: int) -> np.ndarray:
        """Detection probability of agent j at the target estimate, flattened
        over (candidate position, level) with the level index minor."""
        if not self._pd_tables:
            self._pd_tables = [self._build_pd_table(k) for k in range(self.n_agents)]
        return self._pd_tables[j]

    def _build_pd_table(self, j: int) -> np.ndarray:
        n_l = self.n_levels(j)
        n_u = self.candidate_positions[j].shape[0]
        if self.target_estimate is None:
            return np.zeros(n_u * n_l)
        s = self.sensing
        eta = np.linalg.norm(self.target_estimate - self.candidate_positions[j], axis=1)
        # aimed at the estimate, so containment reduces to axial reach
        inside = eta <= s.cone_height
        safe = np.where(eta > 0.0, eta, 1.0)
        gain = np.where(eta < s.r0, 1.0, (s.r0 / safe) ** s.path_loss_exp)
        base = np.where(inside, s.p_d_max * gain, 0.0)
        ratios = np.array([s.power_ratio(l) for l in self.level_sets[j]])
        return np.clip(base[:, None] * ratios[None, :], 0.0, s.p_d_max).reshape(-1)

    def gain_table(self, i: int, j: int) -> np.ndarray:
        """Path-loss gain (0 outside the cone) from each candidate position of
        transmitter j to each candidate position of receiver i: (m_i, m_j)."""
        if (i, j) not in self._gain_tables:
            s = self.sensing
            ui = self.candidate_positions[i]
            uj = self.candidate_positions[j]
            axes = self.candidate_axes(j)
            d = ui[:, None, :] - uj[None, :, :]
            eta = np.linalg.norm(d, axis=2)
            a = np.einsum("ijk,jk->ij", d, axes)
            half_cos = np.cos(s.cone_angle / 2.0)
            inside = ((a >= 0.0) & (a <= s.cone_height) & (a >= eta * half_cos)) | (eta == 0.0)
            safe = np.where(eta > 0.0, eta, 1.0)
            gain = np.where(eta < s.r0, 1.0, (s.r0 / safe) ** s.path_loss_exp)
            self._gain_tables[(i, j)] = np.where(inside, gain, 0.0)
        return self._gain_tables[(i, j)]

    def linear_levels(self, j: int) -> np.ndarray:
        return np.array([db_to_linear(l) for l in self.level_sets[j]])

    # -- batched evaluation -------------------------------------------------

    def sample_batch(self, rng: np.random.Generator, n_s: int) -> np.ndarray:
        """Uniform joint samples with replacement: (N, n_s) flat action indices."""
        return np.stack(
            [rng.integers(0, self.n_actions(j), size=n_s) for j in range(self.n_agents)]
        )

    def evaluate_batch(self, q_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Objective and feasibility for a batch of joint actions (N, B)."""
        n = self.n_agents
        batch = q_idx.shape[1]
        u_idx = np.empty_like(q_idx)
        l_idx = np.empty_like(q_idx)
        for j in range(n):
            u_idx[j], l_idx[j] = np.divmod(q_idx[j], self.n_levels(j))
        probs = np.stack([self.pd_table(j)[q_idx[j]] for j in range(n)])
        obj = _at_least_n_batch(probs, self.n_required)
        if not self.constraints_enabled:
            return obj, np.ones(batch, dtype=bool)
        feasible = np.ones(batch, dtype=bool)
        for i in range(n):
            interf = np.zeros(batch)
            for j in range(n):
                if j == i:
                    continue
                lin = self.linear_levels(j)[l_idx[j]]
                interf += self.gain_table(i, j)[u_idx[i], u_idx[j]] * lin
            feasible &= interf < self.tolerances_w[i]
        return obj, feasible

    def joint_from_indices(self, q: np.ndarray) -> JointControl:
        actions = []
        for j in range(self.n_agents):
            u, l = divmod(int(q[j]), self.n_levels(j))
            actions.append(CandidateAction(self.candidate_positions[j][u], self.level_sets[j][l]))
        return JointControl(actions)

    def joint_to_indices(self, joint: JointControl) -> np.ndarray | None:
        """Flat action indices of a joint, or None when any action is off-grid."""
        q = np.empty(self.n_agents, dtype=np.int64)
        for j, act in enumerate(joint.actions):
            match = np.flatnonzero((self.candidate_positions[j] == act.position).all(axis=1))
            if not match.size or act.level_dbw not in self.level_sets[j]:
                return None
            q[j] = int(match[0]) * self.n_levels(j) + self.level_sets[j].index(act.level_dbw)
        return q

    def _keys_for(self, q_idx: np.ndarray) -> np.ndarray:
        """Deterministic tie-break key columns (level index, then position
        lexicographic, agent-major): (B, 4N)."""
        cols = []
        for j in range(self.n_agents):
            u, l = np.divmod(q_idx[j], self.n_levels(j))
            pos = self.candidate_positions[j][u]
            cols.extend([l.astype(float), pos[:, 0], pos[:, 1], pos[:, 2]])
        return np.column_stack(cols)

    def select_best(
        self, q_idx: np.ndarray, obj: np.ndarray, feasible: np.ndarray, floor: float = -np.inf
    ) -> int | None:
        """Column index of the best feasible candidate with objective above
        `floor` (max objective, deterministic tie-break), or None."""
        masked = np.where(feasible, obj, -np.inf)
        best = masked.max() if masked.size else -np.inf
        if best <= floor or not np.isfinite(best):
            return None
        ties = np.flatnonzero(masked == best)
        if ties.size == 1:
            return int(ties[0])
        keys = self._keys_for(q_idx[:, ties])
        order = np.lexsort(keys[:, ::-1].T)
        return int(ties[order[0]])


def problem_from_grids(
    prev_positions,
    grid: ControlGrid,
    level_set,
    target_estimate,
    n_required: int,
    tolerances_w,
    sensing: SensingParams,
    prev_axes,
    box=None,
    constraints_enabled: bool = True,
) -> ControlProblem:
    """Assemble a ControlProblem with per-agent admissible moves from a shared
    control grid (optionally filtered to the surveillance box)."""
    candidates = []
    for u in prev_positions:
        c = admissible_controls(u, grid)
        if box is not None:
            keep = box.contains_many(c)
            c = c[keep] if keep.any() else as_vec3(u)[None, :]
        candidates.append(c)
    n = len(candidates)
    return ControlProblem(
        prev_positions=list(prev_positions),
        candidate_positions=candidates,
        level_sets=[list(level_set) for _ in range(n)],
        target_estimate=target_estimate,
        n_required=n_required,
        tolerances_w=list(tolerances_w),
        sensing=sensing,
        prev_axes=list(prev_axes),
        constraints_enabled=constraints_enabled,
    )


# ---------------------------------------------------------------------------
# Scalar evaluation of arbitrary joints (positions need not be on the grid)


def detection_vector(joint: JointControl, prob: ControlProblem) -> list[float]:
    """Per-agent detection probability at the shared target estimate under
    the hypothesized positions/levels, antennas aimed at the estimate."""
    if prob.target_estimate is None:
        raise ValueError("target estimate is undefined")
    out = []
    for j, act in enumerate(joint.actions):
        axis = prob._axis_for(j, act.position)
        cone = SensingCone(act.position, axis, prob.sensing.cone_height, prob.sensing.cone_angle)
        out.append(
            detection_prob(prob.target_estimate, act.position, act.level_dbw, cone, prob.sensing)
        )
    return out


def interference_feasible(joint: JointControl, prob: ControlProblem) -> bool:
    """True iff every agent's summed received power from its teammates stays
    strictly below its tolerance (vacuously true with constraints disabled)."""
    if not prob.constraints_enabled:
        return True
    s = prob.sensing
    cones = []
    for j, act in enumerate(joint.actions):
        axis = prob._axis_for(j, act.position)
        cones.append(SensingCone(act.position, axis, s.cone_height, s.cone_angle))
    for i, victim in enumerate(joint.actions):
        total = 0.0
        for j, act in enumerate(joint.actions):
            if j == i:
                continue
            total += received_power(victim.position, act.position, act.level_dbw, cones[j], s)
        if not total < prob.tolerances_w[i]:
            return False
    return True


def evaluate_joint(joint: JointControl, prob: ControlProblem) -> tuple[float, bool]:
    """(objective, feasibility) of one joint control; the objective is 0 when
    the target estimate is undefined."""
    if prob.target_estimate is None:
        return 0.0, interference_feasible(joint, prob)
    p = detection_vector(joint, prob)
    return objective_at_least_n(p, prob.n_required), interference_feasible(joint, prob)


def _joint_key(joint: JointControl, prob: ControlProblem) -> tuple:
    key = []
    for j, act in enumerate(joint.actions):
        try:
            l_idx = prob.level_sets[j].index(act.level_dbw)
        except ValueError:
            l_idx = -1
        key.extend([l_idx, act.position[0], act.position[1], act.position[2]])
    return tuple(key)


# ---------------------------------------------------------------------------
# Single-agent controller


def single_agent_control(
    agent_pos,
    grid: ControlGrid,
    level_set,
    target_estimate,
    sensing: SensingParams,
) -> CandidateAction:
    """Greedy single-agent rule: maximize own detection probability at the
    predicted target state; hover with the sensor off when no estimate is
    available. Ties break toward the lower level index, then the
    lexicographically smaller position."""
    agent_pos = as_vec3(agent_pos)
    levels = list(level_set)
    if target_estimate is None:
        return CandidateAction(agent_pos, OFF)
    cands = admissible_controls(agent_pos, grid)
    est = as_vec3(target_estimate)
    eta = np.linalg.norm(est - cands, axis=1)
    inside = eta <= sensing.cone_height
    safe = np.where(eta > 0.0, eta, 1.0)
    gain = np.where(eta < sensing.r0, 1.0, (sensing.r0 / safe) ** sensing.path_loss_exp)
    base = np.where(inside, sensing.p_d_max * gain, 0.0)
    ratios = np.array([sensing.power_ratio(l) for l in levels])
    p = np.clip(base[:, None] * ratios[None, :], 0.0, sensing.p_d_max)
    best = p.max()
    ties = np.argwhere(p == best)
    keys = np.column_stack(
        [
            ties[:, 1].astype(float),
            cands[ties[:, 0], 0],
            cands[ties[:, 0], 1],
            cands[ties[:, 0], 2],
        ]
    )
    u, l = ties[np.lexsort(keys[:, ::-1].T)[0]]
    return CandidateAction(cands[u], levels[l])


# ---------------------------------------------------------------------------
# GRASP


def all_off_joint(prob: ControlProblem) -> JointControl:
    """Hover at the previous positions with transmitters off (always feasible)."""
    return JointControl([CandidateAction(p, OFF) for p in prob.prev_positions])


def grasp_greedy_randomized(prob: ControlProblem, n_s: int, rng: np.random.Generator) -> JointControl:
    """Best feasible joint among n_s uniform samples of the joint action
    space; falls back to the all-off hover joint when none is feasible."""
    if n_s < 1:
        raise ValueError("n_s must be at least 1")
    q = prob.sample_batch(rng, n_s)
    obj, feas = prob.evaluate_batch(q)
    best = prob.select_best(q, obj, feas)
    if best is None:
        return all_off_joint(prob)
    return prob.joint_from_indices(q[:, best])


def _neighbor_positions(
    prob: ControlProblem, j: int, position: np.ndarray, rng: np.random.Generator, mode: str
) -> list[int]:
    """Indices of the u-/u+ candidate positions around `position`: the two
    nearest by Euclidean distance (ties lexicographic), or two sampled from
    the four nearest in ``random`` mode."""
    cands = prob.candidate_positions[j]
    dist = np.linalg.norm(cands - position, axis=1)
    order = np.lexsort((cands[:, 2], cands[:, 1], cands[:, 0], dist))
    order = [int(k) for k in order if dist[k] > 0.0]
    if mode == "random" and len(order) > 2:
        pool = order[:4]
        pick = rng.choice(len(pool), size=2, replace=False)
        return [pool[int(k)] for k in sorted(pick)]
    return order[:2]


def _level_neighborhood(l_cur: int, n_l: int) -> list[int]:
    return sorted({max(l_cur - 1, 0), l_cur, min(l_cur + 1, n_l - 1)})


def grasp_local_search(
    joint: JointControl,
    prob: ControlProblem,
    rng: np.random.Generator,
    neighbor_mode: str = "nearest",
) -> JointControl:
    """One sweep of per-agent neighborhood search: for each agent in turn,
    exhaustively try (u-, u, u+) x (l-, l, l+) keeping the other agents
    fixed, adopting the best strictly improving feasible joint. The output
    is never worse than the input."""
    q = prob.joint_to_indices(joint)
    if q is not None:
        return prob.joint_from_indices(_local_search_indices(q, prob, rng, neighbor_mode))
    return _local_search_offgrid(joint, prob, rng, neighbor_mode)


def _local_search_indices(
    q: np.ndarray, prob: ControlProblem, rng: np.random.Generator, mode: str
) -> np.ndarray:
    cur = np.asarray(q, dtype=np.int64).copy()
    obj0, feas0 = prob.evaluate_batch(cur[:, None])
    if not feas0[0]:
        raise ValueError("local search requires a feasible starting joint")
    cur_obj = float(obj0[0])
    for j in range(prob.n_agents):
        n_l = prob.n_levels(j)
        u_cur, l_cur = divmod(int(cur[j]), n_l)
        u_opts = [u_cur] + _neighbor_positions(prob, j, prob.candidate_positions[j][u_cur], rng, mode)
        combos = [
            u * n_l + l
            for u in u_opts
            for l in _level_neighborhood(l_cur, n_l)
            if u * n_l + l != cur[j]
        ]
        if not combos:
            continue
        batch = np.tile(cur[:, None], (1, len(combos)))
        batch[j] = combos
        obj, feas = prob.evaluate_batch(batch)
        pick = prob.select_best(batch, obj, feas, floor=cur_obj)
        if pick is not None:
            cur = batch[:, pick].copy()
            cur_obj = float(obj[pick])
    return cur


def _local_search_offgrid(
    joint: JointControl, prob: ControlProblem, rng: np.random.Generator, mode: str
) -> JointControl:
    """Scalar-path local search for joints whose actions are not all members
    of the candidate space (e.g. the all-off hover fallback)."""
    cur = JointControl(list(joint.actions))
    cur_obj, cur_feas = evaluate_joint(cur, prob)
    if not cur_feas:
        raise ValueError("local search requires a feasible starting joint")
    for j in range(prob.n_agents):
        act = cur.actions[j]
        u_opts: list[np.ndarray] = [act.position]
        u_opts += [
            prob.candidate_positions[j][k]
            for k in _neighbor_positions(prob, j, act.position, rng, mode)
        ]
        if act.level_dbw in prob.level_sets[j]:
            l_opts = [
                prob.level_sets[j][k]
                for k in _level_neighborhood(prob.level_sets[j].index(act.level_dbw), prob.n_levels(j))
            ]
        else:
            l_opts = [act.level_dbw]
        best_obj, best_joint, best_key = cur_obj, None, None
        for pos in u_opts:
            for lev in l_opts:
                if np.array_equal(pos, act.position) and lev == act.level_dbw:
                    continue
                cand = JointControl(list(cur.actions))
                cand.actions[j] = CandidateAction(pos, lev)
                o, f = evaluate_joint(cand, prob)
                if f and o > cur_obj:
                    key = _joint_key(cand, prob)
                    if o > best_obj or (o == best_obj and (best_key is None or key < best_key)):
                        best_obj, best_joint, best_key = o, cand, key
        if best_joint is not None:
            cur, cur_obj = best_joint, best_obj
    return cur


def grasp_solve(
    prob: ControlProblem,
    n_s: int,
    n_iterations: int,
    rng: np.random.Generator,
    neighbor_mode: str = "nearest",
) -> JointControl:
    """Alternate randomized construction and local search, keeping the best
    feasible joint across all iterations. Deterministic given the rng state."""
    if n_iterations < 1:
        raise ValueError("n_iterations must be at least 1")
    best_joint = None
    best_obj = -np.inf
    best_key: tuple | None = None
    for _ in range(n_iterations):
        cand = grasp_greedy_randomized(prob, n_s, rng)
        cand = grasp_local_search(cand, prob, rng, neighbor_mode)
        obj, _ = evaluate_joint(cand, prob)
        key = _joint_key(cand, prob)
        if obj > best_obj or (obj == best_obj and (best_key is None or key < best_key)):
            best_joint, best_obj, best_key = cand, obj, key
    return best_joint


def distributed_grasp_solve(
    prob: ControlProblem,
    n_s: int,
    n_iterations: int,
    rngs: list[np.random.Generator],
    neighbor_mode: str = "nearest",
) -> JointControl:
    """Each agent solves the shared problem with its own stream; the team
    adopts the candidate with maximal objective (ties to the lowest agent id)."""
    best_joint, best_obj = None, -np.inf
    for rng in rngs:
        cand = grasp_solve(prob, n_s, n_iterations, rng, neighbor_mode)
        obj, _ = evaluate_joint(cand, prob)
        if obj > best_obj:
            best_joint, best_obj = cand, obj
    return best_joint


def exhaustive_oracle(prob: ControlProblem, cap: int = 1_000_000) -> JointControl:
    """True argmax over the full joint action space, with the same tie-break
    order as the GRASP comparisons. Errors when the space exceeds `cap`."""
    sizes = [prob.n_actions(j) for j in range(prob.n_agents)]
    total = int(np.prod(sizes))
    if total > cap:
        raise ValueError(f"joint action space of size {total} exceeds cap {cap}")
    best_q = None
    best_obj = -np.inf
    best_key = None
    chunk = 1 << 17
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        q = np.stack(np.unravel_index(flat, sizes))
        obj, feas = prob.evaluate_batch(q)
        sel = prob.select_best(q, obj, feas)
        if sel is None:
            continue
        cand_obj = float(obj[sel])
        cand_key = _joint_key(prob.joint_from_indices(q[:, sel]), prob)
        if cand_obj > best_obj or (cand_obj == best_obj and (best_key is None or cand_key < best_key)):
            best_obj, best_key = cand_obj, cand_key
            best_q = q[:, sel].copy()
    if best_q is None:
        return all_off_joint(prob)
    return prob.joint_from_indices(best_q)


def greedy_level_fallback(prob: ControlProblem) -> JointControl:
    """Posture used when no target estimate exists: hover at the previous
    positions with retained axes, raising each agent in id order to the
    highest transmit level that keeps the whole team interference-feasible.
    Off is the guaranteed-feasible floor."""
    joint = all_off_joint(prob)
    for j in range(prob.n_agents):
        for level in sorted(prob.level_sets[j], reverse=True):
            if is_off(level):
                break
            trial = JointControl(list(joint.actions))
            trial.actions[j] = CandidateAction(prob.prev_positions[j], level)
            if interference_feasible(trial, prob):
                joint = trial
                break
    return joint
