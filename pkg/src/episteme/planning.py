"""Upper-level task selection, a minimal epistemic (Kripke) model, and reallocation."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .belief import BeliefState, softmax_rows
from .core import ConfigurationSpace, Goal, Mission, enumerate_valid_configs
from .world import WorldState


# ---------------------------------------------------------------------------
# Upper-level task subset selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AllocationProblem:
    task_costs: np.ndarray       # c_tau, shape (n_tasks,)
    assign_costs: np.ndarray     # c'_{i tau}, shape (n_robots, n_tasks)
    lower_costs: np.ndarray      # b_{i tau}, shape (n_robots, n_tasks)
    K: int

    def __post_init__(self) -> None:
        for name in ("task_costs", "assign_costs", "lower_costs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if self.assign_costs.shape != self.lower_costs.shape or self.assign_costs.shape[1] != len(self.task_costs):
            raise ValueError("cost arrays disagree on shape")
        if not 1 <= self.K <= len(self.task_costs):
            raise ValueError("K must lie in [1, n_tasks]")

    @property
    def n_robots(self) -> int:
        return self.assign_costs.shape[0]

    @property
    def n_tasks(self) -> int:
        return len(self.task_costs)


def subset_objective(problem: AllocationProblem, beliefs: np.ndarray, subset: Iterable[int]) -> float:
    """Summed belief support of the chosen tasks minus selection and assignment costs.

    Robots are matched to the chosen tasks by the lower-level problem (each
    task one robot, each robot at most one task, minimising ``lower_costs``);
    the matching is then charged at ``assign_costs``.
    """
    subset = sorted(subset)
    if not subset:
        return 0.0
    if len(subset) > problem.n_robots:
        return -math.inf
    support = beliefs[:, subset].sum(axis=0) - problem.task_costs[subset]
    rows, cols = linear_sum_assignment(problem.lower_costs[:, subset])
    charge = problem.assign_costs[:, subset][rows, cols].sum()
    return float(support.sum() - charge)


def select_task_subset(problem: AllocationProblem, beliefs, active_tasks: Iterable[int],
                       min_tasks: int = 1) -> tuple[int, ...]:
    """Greedy marginal-gain selection of at most K active tasks.

    Keeps adding while the gain is positive or fewer than ``min_tasks`` are
    chosen. Ties go to the lower task index.
    """
    beliefs = np.asarray(beliefs, dtype=float)
    remaining = sorted(set(active_tasks))
    if not remaining:
        raise ValueError("no active tasks")
    limit = min(problem.K, len(remaining), problem.n_robots)
    chosen: list[int] = []
    value = 0.0
    while len(chosen) < limit:
        best_gain, best_task = -math.inf, None
        for t in remaining:
            if t in chosen:
                continue
            gain = subset_objective(problem, beliefs, chosen + [t]) - value
            if gain > best_gain + 1e-12:
                best_gain, best_task = gain, t
        if best_task is None or (best_gain <= 0.0 and len(chosen) >= min_tasks):
            break
        chosen.append(best_task)
        value += best_gain
    return tuple(sorted(chosen))


def exhaustive_task_subset(problem: AllocationProblem, beliefs, active_tasks: Iterable[int],
                           min_tasks: int = 1) -> tuple[tuple[int, ...], float]:
    """Best subset by enumeration (reference for the greedy solver)."""
    beliefs = np.asarray(beliefs, dtype=float)
    remaining = sorted(set(active_tasks))
    limit = min(problem.K, len(remaining), problem.n_robots)
    best, best_value = (), -math.inf
    for size in range(max(min_tasks, 1), limit + 1):
        for combo in itertools.combinations(remaining, size):
            v = subset_objective(problem, beliefs, combo)
            if v > best_value + 1e-12:
                best, best_value = combo, v
    return best, best_value


# ---------------------------------------------------------------------------
# Minimal epistemic model
# ---------------------------------------------------------------------------

class FormulaError(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    """Robot ``robot`` is assigned goal ``goal``."""
    robot: int
    goal: int


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Knows:
    agent: int
    operand: "Formula"


@dataclass(frozen=True)
class Believes:
    agent: int
    operand: "Formula"


Formula = Union[Atom, Not, And, Knows, Believes]


@dataclass(frozen=True)
class EpistemicState:
    """Worlds are configurations; ``accessibility[i][w]`` lists the worlds i cannot tell from w."""

    worlds: ConfigurationSpace
    accessibility: Mapping[int, tuple[frozenset[int], ...]]
    pointed_world: int | None = None

    def related(self, agent: int, w: int) -> frozenset[int]:
        try:
            return self.accessibility[agent][w]
        except KeyError:
            raise FormulaError(f"no accessibility relation for robot {agent}") from None


def epistemic_accessibility(beliefs: BeliefState | Mapping[int, BeliefState], threshold: float = 0.2,
                            agents: Iterable[int] | None = None) -> EpistemicState:
    """Relate two worlds iff both are plausible: mass >= threshold * peak mass.

    A single belief is shared by every agent in ``agents`` (default: all
    robots of the space); a mapping gives each robot its own relation.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if isinstance(beliefs, BeliefState):
        ids = range(beliefs.space.n_robots) if agents is None else agents
        per_agent = {i: beliefs for i in ids}
    else:
        per_agent = dict(beliefs)
    space = next(iter(per_agent.values())).space
    relations = {}
    pointed = None
    for i, b in per_agent.items():
        q = np.asarray(b.posterior, dtype=float)
        plausible = frozenset(np.flatnonzero(q >= threshold * q.max()).tolist())
        relations[i] = tuple(plausible if w in plausible else frozenset({w}) for w in range(len(space)))
        if pointed is None:
            pointed = int(np.argmax(q))
    return EpistemicState(space, relations, pointed)


def _check_formula(state: EpistemicState, phi) -> None:
    if isinstance(phi, Atom):
        if not (0 <= phi.robot < state.worlds.n_robots and 0 <= phi.goal < state.worlds.n_goals):
            raise FormulaError(f"atom {phi} out of range")
    elif isinstance(phi, Not):
        _check_formula(state, phi.operand)
    elif isinstance(phi, And):
        _check_formula(state, phi.left)
        _check_formula(state, phi.right)
    elif isinstance(phi, (Knows, Believes)):
        if phi.agent not in state.accessibility:
            raise FormulaError(f"no accessibility relation for robot {phi.agent}")
        _check_formula(state, phi.operand)
    else:
        raise FormulaError(f"not a formula: {phi!r}")


def _holds(state: EpistemicState, w: int, phi) -> bool:
    if isinstance(phi, Atom):
        return state.worlds[w][phi.robot] == phi.goal
    if isinstance(phi, Not):
        return not _holds(state, w, phi.operand)
    if isinstance(phi, And):
        return _holds(state, w, phi.left) and _holds(state, w, phi.right)
    # K and B share the single belief-derived relation in this model
    return all(_holds(state, v, phi.operand) for v in state.related(phi.agent, w))


def evaluate_formula(state: EpistemicState, world: int, phi) -> bool:
    if not 0 <= world < len(state.worlds):
        raise FormulaError(f"world {world} out of range")
    _check_formula(state, phi)
    return _holds(state, world, phi)


# ---------------------------------------------------------------------------
# Dimensionality reduction and reallocation
# ---------------------------------------------------------------------------

def prune_configuration_space(space: ConfigurationSpace, posterior, keep_mass: float
                              ) -> tuple[ConfigurationSpace, tuple[int, ...]]:
    """Keep the fewest most-probable configurations covering ``keep_mass``.

    Survivors keep their original relative order; the returned mapping lists
    their indices in ``space``.
    """
    if not 0.0 < keep_mass <= 1.0:
        raise ValueError("keep_mass must lie in (0, 1]")
    q = np.asarray(posterior, dtype=float)
    order = np.argsort(-q, kind="stable")
    cum = np.cumsum(q[order])
    n_keep = int(np.searchsorted(cum, keep_mass - 1e-12)) + 1
    if keep_mass >= 1.0:
        n_keep = len(q)
    keep = tuple(sorted(order[:min(n_keep, len(q))].tolist()))
    return space.subspace(keep), keep


def restrict_posterior(posterior, mapping: Sequence[int]) -> np.ndarray:
    q = np.asarray(posterior, dtype=float)[list(mapping)]
    total = q.sum()
    return q / total if total > 0 else np.full(len(q), 1.0 / len(q))


def multitask_space(n_robots: int, tasks: Sequence[Goal]) -> ConfigurationSpace:
    """One robot per task when tasks suffice, otherwise cover every task."""
    mission = Mission.ONE_TO_ONE if len(tasks) == n_robots else Mission.COVER
    return enumerate_valid_configs(n_robots, tasks, mission)


@dataclass(frozen=True)
class Reallocation:
    world: WorldState
    newly_completed: tuple[int, ...]
    subsets: tuple[tuple[int, ...], ...]      # goal ids chosen by each robot
    beliefs: tuple[BeliefState | None, ...]


def completed_by(world: WorldState, radius: float) -> tuple[int, ...]:
    done = []
    for g in world.active_goals:
        if any(math.hypot(r.position[0] - g.position[0], r.position[1] - g.position[1]) <= radius
               for r in world.robots):
            done.append(g.id)
    return tuple(done)


def reallocation_step(world: WorldState, task_evidence: Sequence[np.ndarray], completion_radius: float,
                      problems: Sequence[AllocationProblem] | None = None, K: int | None = None,
                      force: bool = False,
                      previous: Sequence[Sequence[int]] | None = None) -> Reallocation:
    """Retire reached tasks and let every robot re-plan over the remainder.

    ``task_evidence[i]`` is robot i's aggregated evidence over *all* goals of
    the world (n_robots x n_goals); ``problems[i]`` holds its costs over all
    goals. Without a completion (and without ``force``) nothing changes and
    ``beliefs`` entries are None. A robot whose new subset equals its entry in
    ``previous`` keeps its belief (entry None): its space did not change.
    """
    done = completed_by(world, completion_radius)
    n = len(world.robots)
    if not done and not force:
        return Reallocation(world, (), (), tuple(None for _ in range(n)))
    world = replace(world, completed_goals=world.completed_goals | set(done))
    active = world.active_goals
    if not active:
        return Reallocation(world, done, tuple(() for _ in range(n)), tuple(None for _ in range(n)))
    index = {g.id: j for j, g in enumerate(world.goals)}
    cols = [index[g.id] for g in active]
    K = n if K is None else K
    subsets, beliefs = [], []
    for i in range(n):
        probs = softmax_rows(np.asarray(task_evidence[i], dtype=float)[:, cols])
        if problems is None:
            zeros = np.zeros((n, len(world.goals)))
            prob = AllocationProblem(np.zeros(len(world.goals)), zeros, zeros, min(K, len(world.goals)))
        else:
            prob = problems[i]
        sub = AllocationProblem(prob.task_costs[cols], prob.assign_costs[:, cols], prob.lower_costs[:, cols],
                                min(K, len(cols)))
        want = min(K, len(cols), n)
        picked = select_task_subset(sub, probs, range(len(cols)), min_tasks=want)
        ids = tuple(active[j].id for j in picked)
        tasks = [world.goals[index[g]] for g in ids]
        subsets.append(ids)
        if previous is not None and tuple(previous[i]) == ids:
            beliefs.append(None)
        else:
            beliefs.append(BeliefState.uniform(i, multitask_space(n, tasks)))
    return Reallocation(world, done, tuple(subsets), tuple(beliefs))
