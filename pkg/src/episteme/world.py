"""Ground-truth world stepping, noisy sensing and the per-pair observation filter."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import ControlInput, Goal, Modality, NoiseModel, RobotState, wrap_angle


class ControlLimitError(ValueError):
    def __init__(self, robot_id: int, norm: float, v_max: float):
        super().__init__(f"robot {robot_id}: control norm {norm:.6g} exceeds v_max={v_max:.6g}")
        self.robot_id = robot_id


@dataclass(frozen=True)
class Arena:
    xmin: float = 0.0
    ymin: float = 0.0
    xmax: float = 30.0
    ymax: float = 30.0

    @property
    def diagonal(self) -> float:
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)

    def clamp(self, x: float, y: float) -> tuple[float, float]:
        return (min(max(x, self.xmin), self.xmax), min(max(y, self.ymin), self.ymax))

    def contains(self, p: Sequence[float]) -> bool:
        return self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax


@dataclass(frozen=True)
class WorldState:
    time_step: int
    robots: tuple[RobotState, ...]
    goals: tuple[Goal, ...]
    completed_goals: frozenset[int] = frozenset()
    arena: Arena = field(default_factory=Arena)
    dt: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "goals", tuple(self.goals))
        object.__setattr__(self, "completed_goals", frozenset(self.completed_goals))
        if self.time_step < 0:
            raise ValueError("time_step must be >= 0")
        if not self.completed_goals <= {g.id for g in self.goals}:
            raise ValueError("completed_goals must be goal ids")

    @property
    def active_goals(self) -> tuple[Goal, ...]:
        return tuple(g for g in self.goals if g.id not in self.completed_goals)

    def positions(self) -> np.ndarray:
        return np.array([r.position for r in self.robots], dtype=float)


def step_dynamics(
    world: WorldState,
    controls: Sequence[ControlInput],
    noise: NoiseModel,
    rng: np.random.Generator,
    v_max: float = 1.0,
) -> WorldState:
    """Advance a noisy single integrator: ``x += u*dt + N(0, sigma^2)*sqrt(dt)``."""
    if len(controls) != len(world.robots):
        raise ValueError(f"expected {len(world.robots)} controls, got {len(controls)}")
    dt = world.dt
    for robot, u in zip(world.robots, controls):
        if u.norm > v_max * (1.0 + 1e-9):
            raise ControlLimitError(robot.id, u.norm, v_max)
    if noise.process_sigma > 0.0:
        jitter = rng.normal(0.0, noise.process_sigma * math.sqrt(dt), size=(len(controls), 2))
    else:
        jitter = np.zeros((len(controls), 2))
    robots = []
    for robot, u, nu in zip(world.robots, controls, jitter):
        x = robot.position[0] + u.velocity_command[0] * dt + nu[0]
        y = robot.position[1] + u.velocity_command[1] * dt + nu[1]
        x, y = world.arena.clamp(x, y)
        dx, dy = x - robot.position[0], y - robot.position[1]
        heading = math.atan2(dy, dx) if math.hypot(dx, dy) > 1e-12 else robot.heading
        robots.append(replace(robot, position=(x, y), prev_position=robot.position,
                              heading=heading, speed=min(u.norm, v_max)))
    return replace(world, time_step=world.time_step + 1, robots=tuple(robots))


class ObservationKind(enum.Enum):
    RANGE_TO_SUBJECT = "range"
    BEARING_TO_SUBJECT = "bearing"


# kinds each modality measures; a depth sensor returns a point, i.e. range and bearing
MODALITY_KINDS: dict[Modality, tuple[ObservationKind, ...]] = {
    Modality.RANGE: (ObservationKind.RANGE_TO_SUBJECT, ObservationKind.BEARING_TO_SUBJECT),
    Modality.BEARING: (ObservationKind.BEARING_TO_SUBJECT,),
}


@dataclass(frozen=True)
class Observation:
    observer: int
    subject: int
    kind: ObservationKind
    value: float
    step: int
    subject_is_goal: bool = False


def observe(
    world: WorldState,
    observer: int,
    noise: NoiseModel,
    rng: np.random.Generator,
    include_goals: bool = True,
) -> list[Observation]:
    """Measure every other robot (noisy) and every active goal (noise-free)."""
    me = world.robots[observer]
    kinds = MODALITY_KINDS[me.sensor]
    ox, oy = me.position
    out: list[Observation] = []
    for other in world.robots:
        if other.id == me.id:
            continue
        dx, dy = other.position[0] - ox, other.position[1] - oy
        for kind in kinds:
            if kind is ObservationKind.RANGE_TO_SUBJECT:
                value = max(0.0, math.hypot(dx, dy) + rng.normal(0.0, noise.range_sigma))
            else:
                value = wrap_angle(math.atan2(dy, dx) + rng.normal(0.0, noise.bearing_sigma))
            out.append(Observation(me.id, other.id, kind, value, world.time_step))
    if include_goals:
        for goal in world.active_goals:
            dx, dy = goal.position[0] - ox, goal.position[1] - oy
            for kind in kinds:
                value = math.hypot(dx, dy) if kind is ObservationKind.RANGE_TO_SUBJECT else math.atan2(dy, dx)
                out.append(Observation(me.id, goal.id, kind, value, world.time_step, subject_is_goal=True))
    return out


@dataclass
class ObservationFilter:
    """Exponential moving average per (observer, subject, kind).

    Bearings are smoothed through the wrapped angle difference so the
    estimate crosses the +-pi seam instead of averaging through zero.
    """

    smoothing_alpha: float = 0.6
    last_estimate: dict[tuple[int, int, ObservationKind, bool], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.smoothing_alpha <= 1.0:
            raise ValueError("smoothing_alpha must lie in (0, 1]")

    def reset(self) -> None:
        self.last_estimate.clear()


def filter_observation(filt: ObservationFilter, obs: Observation) -> float:
    if not math.isfinite(obs.value):
        raise ValueError("observation value must be finite")
    key = (obs.observer, obs.subject, obs.kind, obs.subject_is_goal)
    last = filt.last_estimate.get(key)
    if last is None:
        est = obs.value
    elif obs.kind is ObservationKind.BEARING_TO_SUBJECT:
        est = wrap_angle(last + filt.smoothing_alpha * wrap_angle(obs.value - last))
    else:
        est = last + filt.smoothing_alpha * (obs.value - last)
    filt.last_estimate[key] = est
    return est


def check_convergence(world: WorldState, target: Sequence[int], radius: float,
                      goals: Sequence[Goal] | None = None) -> bool:
    """True iff every robot r lies within ``radius`` of goal ``target[r]``.

    ``target`` indexes into ``goals`` (defaults to ``world.goals``).
    """
    if radius <= 0.0:
        raise ValueError("radius must be > 0")
    goals = world.goals if goals is None else goals
    for robot, g in zip(world.robots, target):
        gx, gy = goals[g].position
        if math.hypot(robot.position[0] - gx, robot.position[1] - gy) > radius:
            return False
    return True
