"""One-step expected-free-energy action selection over a discrete candidate set."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .belief import BeliefState, FreeEnergyReport, bayes_update, entropy, inflate, joint_over_configs, \
    kl_divergence, softmax_rows
from .core import ControlInput
from .evidence import ReasoningScope, RobotView, SalienceParams, goal_array, own_rows
from .world import Arena


@dataclass(frozen=True)
class PolicyParams:
    beta: float = 0.25
    sharpness: float = 8.0
    n_headings: int = 8
    inflation: float = 0.05


@dataclass(frozen=True)
class PreferredOutcome:
    target_config_index: int
    sharpness: float = 8.0

    def distribution(self, n_configs: int) -> np.ndarray:
        """Softmax of ``sharpness`` times the one-hot indicator of the target."""
        if not 0 <= self.target_config_index < n_configs:
            raise IndexError("target configuration index out of range")
        logits = np.zeros(n_configs)
        logits[self.target_config_index] = self.sharpness
        z = np.exp(logits - logits.max())
        return z / z.sum()


@dataclass(frozen=True)
class PolicyCandidate:
    control: ControlInput
    predicted_pose: tuple[float, float]
    efe: FreeEnergyReport


def travel_costs(belief: BeliefState, own_id: int, goal_positions, own_position, diagonal: float) -> np.ndarray:
    """Own distance to the goal each configuration assigns, over the arena diagonal."""
    goals = goal_array(goal_positions)
    assigned = goals[belief.space.array[:, own_id]]
    d = np.hypot(assigned[:, 0] - own_position[0], assigned[:, 1] - own_position[1])
    return d / diagonal


def select_preferred_config(belief: BeliefState, own_id: int, goal_positions, own_position,
                            beta: float = 0.25, sharpness: float = 8.0,
                            diagonal: float = Arena().diagonal) -> PreferredOutcome:
    """Most probable configuration after a travel-cost penalty; lowest index wins ties."""
    if len(belief.space) == 0:
        raise ValueError("empty configuration space")
    score = belief.posterior - beta * travel_costs(belief, own_id, goal_positions, own_position, diagonal)
    return PreferredOutcome(int(np.argmax(score)), sharpness)


def candidate_controls(own_position, goal_positions, n_headings: int = 8, v_max: float = 1.0,
                       dt: float = 1.0) -> list[ControlInput]:
    """Stop, full and half speed toward each goal, and ``n_headings`` compass moves.

    Goal-directed moves are capped so they do not overshoot the goal.
    """
    if n_headings < 4:
        raise ValueError("n_headings must be >= 4")
    goals = goal_array(goal_positions)
    dists = np.hypot(goals[:, 0] - own_position[0], goals[:, 1] - own_position[1])
    raw: list[tuple[float, float]] = [(0.0, 0.0)]
    raw += [ControlInput.toward(own_position, g, min(v_max, d / dt)).velocity_command
            for g, d in zip(goals, dists)]
    for k in range(n_headings):
        a = 2.0 * math.pi * k / n_headings
        raw.append((v_max * math.cos(a), v_max * math.sin(a)))
    raw += [ControlInput.toward(own_position, g, min(0.5 * v_max, d / dt)).velocity_command
            for g, d in zip(goals, dists)]
    seen: set[tuple[float, float]] = set()
    out: list[ControlInput] = []
    for vx, vy in raw:
        key = (round(vx, 9) + 0.0, round(vy, 9) + 0.0)
        if key not in seen:
            seen.add(key)
            out.append(ControlInput((vx, vy)))
    return out


def predicted_positions(own_position, candidates: Sequence[ControlInput], arena: Arena, dt: float = 1.0) -> np.ndarray:
    u = np.array([c.velocity_command for c in candidates], dtype=float).reshape(-1, 2)
    p = np.asarray(own_position, dtype=float) + u * dt
    p[:, 0] = np.clip(p[:, 0], arena.xmin, arena.xmax)
    p[:, 1] = np.clip(p[:, 1], arena.ymin, arena.ymax)
    return p


def score_candidates(next_positions: np.ndarray, view: RobotView, goal_positions, scope: ReasoningScope,
                     params: SalienceParams, aggregated: np.ndarray, belief: BeliefState,
                     preferred: PreferredOutcome, inflation: float = 0.05,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Entropy and KL of the posterior each noise-free one-step rollout would produce.

    Only the owner's row changes: its k=0 self-evidence and, when in scope,
    the k=2 evidence abstractable peers would read off the new motion. Rows
    for peers keep their current aggregated evidence.
    """
    i = view.owner
    rows = own_rows(view, goal_positions, scope, params, next_positions)
    agg = np.repeat(np.asarray(aggregated, dtype=float)[None], len(rows), axis=0)
    agg[:, i, :] = rows
    likelihood = joint_over_configs(softmax_rows(agg), belief.space)
    q_next = bayes_update(inflate(belief.posterior, inflation)[None], likelihood)
    target = preferred.distribution(len(belief.space))
    return np.atleast_1d(entropy(q_next)), np.atleast_1d(kl_divergence(q_next, target))


def score_candidate(candidate: ControlInput, view: RobotView, goal_positions, scope: ReasoningScope,
                    params: SalienceParams, aggregated: np.ndarray, belief: BeliefState,
                    preferred: PreferredOutcome, arena: Arena = Arena(), inflation: float = 0.05,
                    ) -> FreeEnergyReport:
    pos = predicted_positions(view.own_positions[-1], [candidate], arena, params.dt)
    h, kl = score_candidates(pos, view, goal_positions, scope, params, aggregated, belief, preferred, inflation)
    return FreeEnergyReport(float(h[0]), float(kl[0]))


def select_action(totals: Sequence[float], progress: Sequence[float] | None = None,
                  tol: float = 1e-12) -> int:
    """Index of the lowest total; ties go to larger progress, then lower index."""
    totals = np.asarray(totals, dtype=float)
    if totals.size == 0:
        raise ValueError("no candidates to select from")
    best = totals.min()
    tied = np.flatnonzero(totals <= best + tol * max(1.0, abs(best)))
    if progress is None or len(tied) == 1:
        return int(tied[0])
    prog = np.asarray(progress, dtype=float)[tied]
    return int(tied[int(np.argmax(prog))])
