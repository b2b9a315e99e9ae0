"""Shared domain types: robots, goals, sensor modalities and goal configurations."""
from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Vec2 = tuple[float, float]


class InfeasibleMissionError(ValueError):
    """Raised when no configuration can satisfy the mission's quotas."""


class Modality(enum.Enum):
    RANGE = "range"
    BEARING = "bearing"

    def can_abstract(self, other: "Modality") -> bool:
        """True when this modality can reconstruct everything ``other`` measures.

        Range (depth) sensors recover bearings, the converse does not hold.
        """
        return self is other or (self is Modality.RANGE and other is Modality.BEARING)


def can_abstract(mine: Modality, theirs: Modality) -> bool:
    return mine.can_abstract(theirs)


class Mission(enum.Enum):
    RENDEZVOUS = "rendezvous"
    ONE_TO_ONE = "one_to_one"
    QUOTA = "quota"
    # every goal receives at least one robot; used when fewer tasks remain than robots
    COVER = "cover"


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle` (no finiteness check)."""
    wrapped = np.remainder(theta + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)


@dataclass(frozen=True)
class NoiseModel:
    process_sigma: float = 0.05
    range_sigma: float = 0.5
    bearing_sigma: float = 0.1

    def __post_init__(self) -> None:
        for name in ("process_sigma", "range_sigma", "bearing_sigma"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite value >= 0, got {value!r}")


@dataclass(frozen=True)
class RobotState:
    """Ground-truth pose of one robot.

    ``prev_position`` equals ``position`` until the first step, so the
    displacement before any motion is zero.
    """

    id: int
    position: Vec2
    heading: float = 0.0
    speed: float = 0.0
    prev_position: Vec2 | None = None
    sensor: Modality = Modality.RANGE

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if self.prev_position is None:
            object.__setattr__(self, "prev_position", self.position)
        else:
            prev = (float(self.prev_position[0]), float(self.prev_position[1]))
            object.__setattr__(self, "prev_position", prev)
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        if self.speed < 0.0:
            raise ValueError("speed must be >= 0")


@dataclass(frozen=True)
class ControlInput:
    velocity_command: Vec2

    @property
    def norm(self) -> float:
        return math.hypot(*self.velocity_command)

    @classmethod
    def toward(cls, origin: Sequence[float], target: Sequence[float], speed: float) -> "ControlInput":
        dx, dy = target[0] - origin[0], target[1] - origin[1]
        dist = math.hypot(dx, dy)
        if dist < 1e-12 or speed <= 0.0:
            return cls((0.0, 0.0))
        return cls((speed * dx / dist, speed * dy / dist))


@dataclass(frozen=True)
class Goal:
    id: int
    position: Vec2
    quota: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if self.quota < 1:
            raise ValueError(f"goal {self.id}: quota must be >= 1")


@dataclass(frozen=True)
class ConfigurationSpace:
    """Ordered set of valid joint assignments (robot index -> goal index).

    Goal indices are positions in the goal sequence the space was built from,
    not goal ids.
    """

    configs: tuple[tuple[int, ...], ...]
    n_robots: int
    n_goals: int
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        configs = tuple(tuple(int(g) for g in c) for c in self.configs)
        if len(set(configs)) != len(configs):
            raise ValueError("duplicate configurations")
        for c in configs:
            if len(c) != self.n_robots or any(not 0 <= g < self.n_goals for g in c):
                raise ValueError(f"configuration {c} out of range")
        object.__setattr__(self, "configs", configs)
        arr = np.array(configs, dtype=np.intp).reshape(len(configs), self.n_robots)
        arr.setflags(write=False)
        object.__setattr__(self, "_array", arr)

    def __len__(self) -> int:
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def __getitem__(self, idx: int) -> tuple[int, ...]:
        return self.configs[idx]

    def index(self, config: Sequence[int]) -> int:
        return self.configs.index(tuple(config))

    @property
    def array(self) -> np.ndarray:
        """Configurations as a read-only ``(len, n_robots)`` integer array."""
        return self._array

    def subspace(self, indices: Sequence[int]) -> "ConfigurationSpace":
        return ConfigurationSpace(tuple(self.configs[i] for i in indices), self.n_robots, self.n_goals)


def _check_mission(n_robots: int, goals: Sequence[Goal], mission: Mission) -> None:
    if n_robots < 1 or len(goals) < 1:
        raise ValueError("need at least one robot and one goal")
    if mission is Mission.ONE_TO_ONE and n_robots != len(goals):
        raise InfeasibleMissionError(
            f"one-to-one mission needs as many goals as robots ({len(goals)} != {n_robots})"
        )
    if mission is Mission.QUOTA and sum(g.quota for g in goals) != n_robots:
        raise InfeasibleMissionError(
            f"goal quotas sum to {sum(g.quota for g in goals)}, not n_robots={n_robots}"
        )
    if mission is Mission.COVER and len(goals) > n_robots:
        raise InfeasibleMissionError("cannot cover more goals than there are robots")


def _multiset_permutations(counts: list[int], length: int):
    # lexicographic generation of tuples with exactly counts[j] copies of j
    if length == 0:
        yield ()
        return
    for j, c in enumerate(counts):
        if c:
            counts[j] -= 1
            for rest in _multiset_permutations(counts, length - 1):
                yield (j,) + rest
            counts[j] += 1


def _surjections(n_robots: int, n_goals: int):
    for c in itertools.product(range(n_goals), repeat=n_robots):
        if len(set(c)) == n_goals:
            yield c


def enumerate_valid_configs(n_robots: int, goals: Sequence[Goal], mission: Mission) -> ConfigurationSpace:
    """Build the lexicographically ordered set of valid joint assignments."""
    _check_mission(n_robots, goals, mission)
    n_goals = len(goals)
    if mission is Mission.RENDEZVOUS:
        configs = [(g,) * n_robots for g in range(n_goals)]
    elif mission is Mission.ONE_TO_ONE:
        configs = list(itertools.permutations(range(n_goals), n_robots))
    elif mission is Mission.QUOTA:
        configs = list(_multiset_permutations([g.quota for g in goals], n_robots))
    else:
        configs = list(_surjections(n_robots, n_goals))
    return ConfigurationSpace(tuple(configs), n_robots, n_goals)


def config_count_oracle(n_robots: int, goals: Sequence[Goal], mission: Mission) -> int:
    """Count valid configurations by filtering every tuple in G^n."""
    n_goals = len(goals)
    quotas = [g.quota for g in goals]
    count = 0
    for c in itertools.product(range(n_goals), repeat=n_robots):
        tally = Counter(c)
        if mission is Mission.RENDEZVOUS:
            ok = len(tally) == 1
        elif mission is Mission.ONE_TO_ONE:
            ok = n_robots == n_goals and len(tally) == n_robots
        elif mission is Mission.QUOTA:
            ok = all(tally.get(j, 0) == q for j, q in enumerate(quotas))
        else:
            ok = len(tally) == n_goals
        count += ok
    return count
