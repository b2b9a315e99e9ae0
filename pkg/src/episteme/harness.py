"""Scenario generation, the closed-loop trial runner and Monte Carlo campaigns."""
from __future__ import annotations

import enum
import math
import multiprocessing
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .belief import BeliefState, entropy
from .core import ControlInput, Goal, Mission, Modality, NoiseModel, RobotState, enumerate_valid_configs
from .evidence import RobotView, SalienceParams, aggregate_orders, build_scope, evidence_at_order, goal_array
from .planning import AllocationProblem, prune_configuration_space, reallocation_step, restrict_posterior
from .policy import candidate_controls, predicted_positions, score_candidates, select_action, \
    select_preferred_config
from .world import Arena, ObservationFilter, ObservationKind, WorldState, filter_observation, observe, \
    step_dynamics


class ScenarioError(RuntimeError):
    pass


class MissionKind(enum.Enum):
    RENDEZVOUS = "rendezvous"
    ONE_TO_ONE = "one_to_one"
    MULTI_TASK = "multi_task"


class Reasoning(enum.Enum):
    ZERO = "zero"
    FIRST = "first"
    HIGHER = "higher"

    @property
    def max_order(self) -> int:
        return {"zero": 0, "first": 1, "higher": 3}[self.value]


@dataclass(frozen=True)
class Tunables:
    eta: float = 0.5
    w_align: float = 1.0
    w_approach: float = 1.0
    h_neutral: float = 1.0
    window: int = 3
    alpha: float = 0.6          # observation filter smoothing
    inflation: float = 0.05     # per-step mixing of the posterior with uniform
    theta: float = 0.2          # accessibility plausibility threshold
    beta: float = 0.25          # travel-cost weight in target selection
    sharpness: float = 8.0
    keep_mass: float = 1.0      # 1.0 disables configuration pruning
    n_headings: int = 8


@dataclass(frozen=True)
class ScenarioSpec:
    mission: MissionKind = MissionKind.RENDEZVOUS
    n_robots: int = 2
    n_goals: int = 2
    arena: Arena = field(default_factory=Arena)
    max_iters: int = 150
    v_max: float = 1.0
    convergence_radius: float = 1.5
    noise: NoiseModel = field(default_factory=NoiseModel)
    modality_mix: str = "uniform"
    reasoning: Reasoning = Reasoning.HIGHER
    seed: int = 0
    max_order: int | None = None
    dt: float = 1.0
    tunables: Tunables = field(default_factory=Tunables)

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.convergence_radius <= 0.0:
            raise ValueError("convergence_radius must be > 0")
        if self.n_robots < 1 or self.n_goals < 1:
            raise ValueError("need at least one robot and one goal")
        if self.mission is MissionKind.ONE_TO_ONE and self.n_goals != self.n_robots:
            raise ValueError("one-to-one missions need n_goals == n_robots")
        parse_modality_mix(self.modality_mix)

    @property
    def order(self) -> int:
        return self.reasoning.max_order if self.max_order is None else self.max_order


def parse_modality_mix(mix: str) -> float:
    """Probability that a robot carries a range sensor."""
    named = {"uniform": 0.5, "range": 1.0, "bearing": 0.0}
    if mix in named:
        return named[mix]
    if mix.startswith("range:"):
        p = float(mix.split(":", 1)[1])
        if 0.0 <= p <= 1.0:
            return p
    raise ValueError(f"unknown modality_mix {mix!r}; use uniform, range, bearing or range:<p>")


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    trial_index: int
    goals: tuple[Goal, ...]
    starts: tuple[tuple[float, float], ...]
    modalities: tuple[Modality, ...]


def trial_seed(seed: int, trial_index: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial_index), stream])


def generate_scenario(spec: ScenarioSpec, trial_index: int, max_attempts: int = 10_000) -> Scenario:
    """Sample goals and starts with pairwise separation >= 2 * convergence radius."""
    rng = np.random.default_rng(trial_seed(spec.seed, trial_index, 0))
    a = spec.arena
    sep = 2.0 * spec.convergence_radius
    points: list[tuple[float, float]] = []
    need = spec.n_goals + spec.n_robots
    attempts = 0
    while len(points) < need:
        attempts += 1
        if attempts > max_attempts:
            raise ScenarioError(f"could not place {need} points {sep} m apart in {max_attempts} samples")
        p = (float(rng.uniform(a.xmin, a.xmax)), float(rng.uniform(a.ymin, a.ymax)))
        if all(math.hypot(p[0] - q[0], p[1] - q[1]) >= sep for q in points):
            points.append(p)
    p_range = parse_modality_mix(spec.modality_mix)
    draws = rng.random(spec.n_robots)
    modalities = tuple(Modality.RANGE if u < p_range else Modality.BEARING for u in draws)
    goals = tuple(Goal(j, points[j]) for j in range(spec.n_goals))
    return Scenario(spec, trial_index, goals, tuple(points[spec.n_goals:]), modalities)


@dataclass
class StepRecord:
    t: int
    positions: list[tuple[float, float]]
    headings: list[float]
    posteriors: list[list[float]]
    preferred: list[int]
    entropies: list[float]
    subsets: list[list[int]]
    evidence: list[dict[int, list[list[float]]]]


@dataclass
class TrialRecord:
    spec: ScenarioSpec
    trial_index: int
    converged: bool
    iterations_used: int
    final_config: tuple[int, ...] | None
    duplicate_task_visits: int
    entropy_trace: list[float]
    modalities: tuple[Modality, ...] = ()
    goals: tuple[Goal, ...] = ()
    steps: list[StepRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.iterations_used > self.spec.max_iters:
            raise ValueError("iterations_used exceeds max_iters")
        if self.converged and self.final_config is None:
            raise ValueError("a converged trial needs a final configuration")


class _Agent:
    """Decision state owned by one robot."""

    def __init__(self, owner: int, modalities: tuple[Modality, ...], goal_ids: Sequence[int],
                 space, spec: ScenarioSpec):
        self.owner = owner
        self.view = RobotView(owner, modalities)
        self.filter = ObservationFilter(spec.tunables.alpha)
        self.scope = build_scope(owner, modalities, spec.order)
        self.goal_ids = tuple(goal_ids)
        self.belief = BeliefState.uniform(owner, space)
        self.preferred = 0
        self.evidence: dict[int, np.ndarray] = {}
        self.full_evidence: np.ndarray | None = None

    def reset(self, goal_ids: Sequence[int], belief: BeliefState) -> None:
        self.goal_ids = tuple(goal_ids)
        self.belief = belief

    def sense(self, world: WorldState, noise: NoiseModel, rng: np.random.Generator) -> None:
        bearings: dict[int, float] = {}
        ranges: dict[int, float] = {}
        for obs in observe(world, self.owner, noise, rng, include_goals=False):
            value = filter_observation(self.filter, obs)
            if obs.kind is ObservationKind.BEARING_TO_SUBJECT:
                bearings[obs.subject] = value
            else:
                ranges[obs.subject] = value
        self.view.record(world.robots[self.owner].position, bearings,
                         ranges if self.view.modality is Modality.RANGE else None)


def _salience_params(spec: ScenarioSpec) -> SalienceParams:
    t = spec.tunables
    return SalienceParams(eta=t.eta, w_align=t.w_align, w_approach=t.w_approach, h_neutral=t.h_neutral,
                          v_max=spec.v_max, dt=spec.dt, window=t.window)


def _mission_space(spec: ScenarioSpec, goals: Sequence[Goal]):
    mission = Mission.RENDEZVOUS if spec.mission is MissionKind.RENDEZVOUS else Mission.ONE_TO_ONE
    return enumerate_valid_configs(spec.n_robots, goals, mission)


def _reached(world: WorldState, radius: float) -> list[int | None]:
    """Index of the goal each robot sits on (goals are > 2 radii apart), else None."""
    out = []
    for r in world.robots:
        hit = None
        for j, g in enumerate(world.goals):
            if math.hypot(r.position[0] - g.position[0], r.position[1] - g.position[1]) <= radius:
                hit = j
                break
        out.append(hit)
    return out


def mission_outcome(world: WorldState, mission: MissionKind, radius: float) -> tuple[int, ...] | None:
    """Final configuration if the mission is accomplished, else None."""
    if mission is MissionKind.MULTI_TASK:
        return () if not world.active_goals else None
    reached = _reached(world, radius)
    if any(j is None for j in reached):
        return None
    if mission is MissionKind.RENDEZVOUS and len(set(reached)) == 1:
        return tuple(reached)
    if mission is MissionKind.ONE_TO_ONE and len(set(reached)) == len(reached):
        return tuple(reached)
    return None


def _cost_problem(agent: _Agent, world: WorldState, diagonal: float) -> AllocationProblem:
    """Robot-to-task distances as this robot estimates them, over all goals."""
    view = agent.view
    goals = goal_array(world.goals)
    pos = np.array([view.origin_of(r, 1)[-1] for r in range(view.n_robots)])
    b = np.hypot(pos[:, None, 0] - goals[None, :, 0], pos[:, None, 1] - goals[None, :, 1]) / diagonal
    return AllocationProblem(np.zeros(len(goals)), b, b, min(len(world.robots), len(goals)))


class _Trial:
    def __init__(self, scenario: Scenario, record: bool):
        self.sc = scenario
        spec = scenario.spec
        self.spec = spec
        self.params = _salience_params(spec)
        self.record = record
        robots = tuple(RobotState(i, p, sensor=m) for i, (p, m) in enumerate(zip(scenario.starts, scenario.modalities)))
        self.world = WorldState(0, robots, scenario.goals, arena=spec.arena, dt=spec.dt)
        self.dyn_rng = np.random.default_rng(trial_seed(spec.seed, scenario.trial_index, 1))
        self.obs_rng = np.random.default_rng(trial_seed(spec.seed, scenario.trial_index, 2))
        self.multi = spec.mission is MissionKind.MULTI_TASK
        all_ids = [g.id for g in scenario.goals]
        if self.multi:
            # placeholder until the first forced reallocation picks subsets
            space = enumerate_valid_configs(1, scenario.goals[:1], Mission.RENDEZVOUS)
            all_ids = all_ids[:1]
        else:
            space = _mission_space(spec, scenario.goals)
        self.agents = [_Agent(i, scenario.modalities, all_ids, space, spec) for i in range(spec.n_robots)]
        self.duplicates = 0
        self.steps: list[StepRecord] = []
        self.entropy_trace: list[float] = []

    # -- per-step pieces -------------------------------------------------
    def _goals_of(self, agent: _Agent) -> list[Goal]:
        by_id = {g.id: g for g in self.world.goals}
        return [by_id[g] for g in agent.goal_ids]

    def _sense_and_update(self) -> None:
        world = self.world
        active = world.active_goals
        for agent in self.agents:
            agent.sense(world, self.spec.noise, self.obs_rng)
            mats = [evidence_at_order(agent.view, active, agent.scope, k, self.params) for k in agent.scope.orders]
            agent.evidence = {m.order: m.values for m in mats}
            agent.full_evidence = aggregate_orders(mats)

    def _reallocate(self, force: bool) -> None:
        world = self.world
        n_all = len(world.goals)
        # evidence over every goal of the world; completed columns are ignored
        full = []
        problems = []
        active_idx = [j for j, g in enumerate(world.goals) if g.id not in world.completed_goals]
        for agent in self.agents:
            mat = np.zeros((self.spec.n_robots, n_all))
            if agent.full_evidence is not None and agent.full_evidence.shape[1] == len(active_idx):
                mat[:, active_idx] = agent.full_evidence
            full.append(mat)
            problems.append(_cost_problem(agent, world, self.spec.arena.diagonal))
        before = set(world.completed_goals)
        result = reallocation_step(world, full, self.spec.convergence_radius, problems, force=force,
                                   previous=None if force else [a.goal_ids for a in self.agents])
        if not result.newly_completed and not force:
            return
        for g in result.newly_completed:
            if g in before:
                continue
            self._count_duplicates(g)
        self.world = result.world
        for agent, subset, belief in zip(self.agents, result.subsets, result.beliefs):
            if belief is not None:
                agent.reset(subset, belief)
                agent.preferred = 0
            else:
                agent.goal_ids = tuple(subset)

    def _count_duplicates(self, goal_id: int) -> None:
        g = next(x for x in self.world.goals if x.id == goal_id)
        pursuers = set()
        for agent in self.agents:
            r = self.world.robots[agent.owner]
            if math.hypot(r.position[0] - g.position[0], r.position[1] - g.position[1]) <= self.spec.convergence_radius:
                pursuers.add(agent.owner)
                continue
            if goal_id in agent.goal_ids and len(agent.belief.space):
                cfg = agent.belief.space[agent.preferred]
                if agent.goal_ids[cfg[agent.owner]] == goal_id:
                    pursuers.add(agent.owner)
        self.duplicates += max(0, len(pursuers) - 1)

    def _belief_step(self) -> None:
        active_ids = [g.id for g in self.world.active_goals]
        col = {g: j for j, g in enumerate(active_ids)}
        t = self.spec.tunables
        for agent in self.agents:
            cols = [col[g] for g in agent.goal_ids if g in col]
            if len(cols) != len(agent.goal_ids):
                continue
            agg = agent.full_evidence[:, cols]
            agent.belief = agent.belief.update(agg, t.inflation)
            if t.keep_mass < 1.0:
                space, mapping = prune_configuration_space(agent.belief.space, agent.belief.posterior, t.keep_mass)
                if len(mapping) < len(agent.belief.space):
                    post = restrict_posterior(agent.belief.posterior, mapping)
                    prior = restrict_posterior(agent.belief.prior, mapping)
                    agent.belief = BeliefState(agent.belief.per_robot_goal_probs, post, prior, agent.owner, space)

    def _decide(self) -> list[ControlInput]:
        spec, t = self.spec, self.spec.tunables
        controls = []
        for agent in self.agents:
            me = self.world.robots[agent.owner]
            goals = self._goals_of(agent)
            if not goals or not len(agent.belief.space):
                controls.append(ControlInput((0.0, 0.0)))
                continue
            gpos = goal_array(goals)
            pref = select_preferred_config(agent.belief, agent.owner, gpos, me.position, t.beta, t.sharpness,
                                           spec.arena.diagonal)
            agent.preferred = pref.target_config_index
            cands = candidate_controls(me.position, gpos, t.n_headings, spec.v_max, spec.dt)
            nxt = predicted_positions(me.position, cands, spec.arena, spec.dt)
            active_ids = [g.id for g in self.world.active_goals]
            cols = [active_ids.index(g) for g in agent.goal_ids]
            agg = agent.full_evidence[:, cols]
            h, kl = score_candidates(nxt, agent.view, gpos, agent.scope, self.params, agg, agent.belief, pref,
                                     t.inflation)
            target = gpos[agent.belief.space[pref.target_config_index][agent.owner]]
            d_now = math.hypot(target[0] - me.position[0], target[1] - me.position[1])
            progress = d_now - np.hypot(nxt[:, 0] - target[0], nxt[:, 1] - target[1])
            controls.append(cands[select_action(h + kl, progress)])
        return controls

    def _snapshot(self) -> None:
        ents = [float(entropy(a.belief.posterior)) for a in self.agents]
        self.entropy_trace.append(float(np.mean(ents)))
        if not self.record:
            return
        w = self.world
        self.steps.append(StepRecord(
            t=w.time_step,
            positions=[r.position for r in w.robots],
            headings=[r.heading for r in w.robots],
            posteriors=[a.belief.posterior.tolist() for a in self.agents],
            preferred=[a.preferred for a in self.agents],
            entropies=ents,
            subsets=[list(a.goal_ids) for a in self.agents],
            evidence=[{k: v.tolist() for k, v in a.evidence.items()} for a in self.agents],
        ))

    # -- main loop ---------------------------------------------------------
    def run(self, horizon: int | None) -> TrialRecord:
        spec = self.spec
        stop_on_success = horizon is None
        limit = spec.max_iters if horizon is None else min(horizon, spec.max_iters)
        self._sense_and_update()
        if self.multi:
            self._reallocate(force=True)
        else:
            self._belief_step()
        outcome = None
        while True:
            if self.multi:
                self._belief_step()
            self._preview_preferred()
            self._snapshot()
            outcome = mission_outcome(self.world, spec.mission, spec.convergence_radius)
            if (outcome is not None and stop_on_success) or self.world.time_step >= limit:
                break
            controls = self._decide()
            self.world = step_dynamics(self.world, controls, spec.noise, self.dyn_rng, spec.v_max)
            if self.multi:
                self._reallocate(force=False)
                if not self.world.active_goals:
                    self._snapshot_final()
                    outcome = ()
                    break
            self._sense_and_update()
            if not self.multi:
                self._belief_step()
        return TrialRecord(spec, self.sc.trial_index, outcome is not None, self.world.time_step,
                           outcome, self.duplicates, self.entropy_trace, self.sc.modalities, self.sc.goals,
                           self.steps)

    def _preview_preferred(self) -> None:
        t = self.spec.tunables
        for agent in self.agents:
            goals = self._goals_of(agent)
            if goals and len(agent.belief.space):
                me = self.world.robots[agent.owner]
                agent.preferred = select_preferred_config(agent.belief, agent.owner, goal_array(goals), me.position,
                                                          t.beta, t.sharpness, self.spec.arena.diagonal
                                                          ).target_config_index

    def _snapshot_final(self) -> None:
        self._snapshot()


def run_trial(scenario: Scenario, horizon: int | None = None, record: bool = False) -> TrialRecord:
    """Run one closed-loop trial.

    With ``horizon`` the trial runs exactly that many steps (capped by
    max_iters) regardless of success, which is what fixed-step belief
    comparisons need.
    """
    return _Trial(scenario, record).run(horizon)


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class TrialSummary:
    converged: bool
    iterations_used: int
    duplicate_task_visits: int


@dataclass(frozen=True)
class CellResult:
    spec: ScenarioSpec
    trials: int
    successes: int
    ci_low: float
    ci_high: float
    mean_iters: float
    mean_duplicates: float
    outcomes: tuple[TrialSummary, ...]

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


def _summarise(job: tuple[ScenarioSpec, int]) -> TrialSummary:
    spec, index = job
    rec = run_trial(generate_scenario(spec, index))
    return TrialSummary(rec.converged, rec.iterations_used, rec.duplicate_task_visits)


def run_campaign(specs: Sequence[ScenarioSpec], trials: int, parallelism: int = 1) -> list[CellResult]:
    """Run ``trials`` paired trials for every spec.

    Trial i of every cell uses scenario index i, so cells that differ only in
    reasoning level see identical scenarios. Results do not depend on
    ``parallelism``: each trial owns its RNG streams and the reduction is
    ordered.
    """
    if not specs:
        raise ValueError("empty campaign grid")
    if trials < 1:
        raise ValueError("trials per cell must be >= 1")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    jobs = [(spec, i) for spec in specs for i in range(trials)]
    if parallelism == 1:
        summaries = [_summarise(j) for j in jobs]
    else:
        with multiprocessing.get_context("spawn").Pool(parallelism) as pool:
            summaries = pool.map(_summarise, jobs, chunksize=max(1, len(jobs) // (4 * parallelism)))
    out = []
    for c, spec in enumerate(specs):
        cell = tuple(summaries[c * trials:(c + 1) * trials])
        wins = sum(s.converged for s in cell)
        lo, hi = wilson_interval(wins, trials)
        out.append(CellResult(spec, trials, wins, lo, hi,
                              float(np.mean([s.iterations_used for s in cell])),
                              float(np.mean([s.duplicate_task_visits for s in cell])), cell))
    return out
