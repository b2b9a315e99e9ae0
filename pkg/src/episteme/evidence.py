"""Goal salience and per-order evidence matrices.

A robot's *view* holds what it knows: its own exact track and, for every peer,
filtered measurements (positions when it carries a range sensor, bearings
otherwise). Evidence at order k is built from that view:

* k=0: the robot's own motion against each goal.
* k=1: each peer's motion as the robot measures it.
* k=2: the robot's own motion as each abstractable peer would perceive it.
* k=3: each third robot's motion as each abstractable peer would perceive it.

Perspectives the robot cannot reconstruct (peer modality not abstractable)
contribute exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Goal, Modality, wrap_angles


@dataclass(frozen=True)
class SalienceParams:
    eta: float = 0.5
    w_align: float = 1.0
    w_approach: float = 1.0
    h_neutral: float = 1.0
    v_max: float = 1.0
    dt: float = 1.0
    # number of past steps the motion estimate spans
    window: int = 3
    # below this apparent speed (m/s) a position track counts as stationary
    still_speed: float = 1e-6

    def __post_init__(self) -> None:
        if not self.eta > 0.0:
            raise ValueError("eta must be > 0")
        if self.w_align < 0.0 or self.w_approach < 0.0 or (self.w_align == 0.0 and self.w_approach == 0.0):
            raise ValueError("weights must be >= 0 with at least one > 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def goal_array(goals) -> np.ndarray:
    if len(goals) and isinstance(goals[0], Goal):
        return np.array([g.position for g in goals], dtype=float)
    return np.asarray(goals, dtype=float).reshape(-1, 2)


def range_salience(ref, last, goals: np.ndarray, steps: int, params: SalienceParams) -> np.ndarray:
    """Alignment plus approach deficit for the displacement ``ref -> last``.

    ``ref``/``last`` have shape (..., 2); the result has shape (..., n_goals).
    Misalignment is measured against the direction to the goal from the
    midpoint of the displacement.
    """
    ref = np.asarray(ref, dtype=float)[..., None, :]
    last = np.asarray(last, dtype=float)[..., None, :]
    disp = last - ref
    to_goal = goals - 0.5 * (ref + last)
    cross = disp[..., 0] * to_goal[..., 1] - disp[..., 1] * to_goal[..., 0]
    dot = (disp * to_goal).sum(-1)
    g_norm = np.hypot(to_goal[..., 0], to_goal[..., 1])
    angle = np.where(g_norm > 1e-9, np.abs(np.arctan2(cross, dot)), 0.0)
    dist_ref = np.hypot(goals[..., 0] - ref[..., 0], goals[..., 1] - ref[..., 1])
    dist_last = np.hypot(goals[..., 0] - last[..., 0], goals[..., 1] - last[..., 1])
    closing = (dist_ref - dist_last) / (steps * params.v_max * params.dt)
    deficit = np.clip(1.0 - closing, 0.0, 1.0)
    h = params.w_align * angle / math.pi + params.w_approach * deficit
    moved = np.hypot(disp[..., 0], disp[..., 1])
    return np.where(moved < params.still_speed * steps * params.dt, params.h_neutral, h)


def bearing_salience(theta_ref, theta_last, origin_last, goals: np.ndarray, steps: int,
                     params: SalienceParams) -> np.ndarray:
    """Alignment-only salience from the rotation of a bearing.

    A subject heading for goal g swings its bearing toward g's bearing. The
    rotation is normalised by what a full-speed tangential mover at g's
    distance would produce, then mapped to a misalignment angle via arccos.
    A bearing that does not rotate carries no information (``h_neutral``).
    """
    theta_ref = np.asarray(theta_ref, dtype=float)[..., None]
    theta_last = np.asarray(theta_last, dtype=float)[..., None]
    origin = np.asarray(origin_last, dtype=float)[..., None, :]
    dtheta = wrap_angles(theta_last - theta_ref)
    theta_mid = theta_ref + 0.5 * dtheta
    to_goal = goals - origin
    phi = np.arctan2(to_goal[..., 1], to_goal[..., 0])
    side = np.sign(wrap_angles(phi - theta_mid))
    reach = np.maximum(np.hypot(to_goal[..., 0], to_goal[..., 1]), params.v_max * params.dt)
    full_rate = steps * params.v_max * params.dt / reach
    cos_mis = np.clip(dtheta * side / full_rate, -1.0, 1.0)
    h = params.w_align * np.arccos(cos_mis) / math.pi
    return np.where(np.abs(dtheta) < 1e-9, params.h_neutral, h)


def _bearings(subject, origin):
    d = np.asarray(subject, dtype=float) - np.asarray(origin, dtype=float)
    return np.arctan2(d[..., 1], d[..., 0])


def motion_salience(ref, last, steps: int, modality: Modality, goals: np.ndarray,
                    params: SalienceParams, origin_ref=None, origin_last=None) -> np.ndarray:
    """Salience of a subject moving ``ref -> last`` as ``modality`` sees it.

    Bearing modality observes from ``origin_ref``/``origin_last``.
    """
    shape = np.broadcast_shapes(np.shape(ref), np.shape(last))[:-1] + (len(goals),)
    if steps == 0:
        return np.full(shape, params.h_neutral)
    if modality is Modality.RANGE:
        return range_salience(ref, last, goals, steps, params)
    return bearing_salience(_bearings(ref, origin_ref), _bearings(last, origin_last),
                            origin_last, goals, steps, params)


@dataclass(frozen=True)
class Track:
    """Motion history of one subject as available to one observer.

    Either ``positions`` (range-capable view) or ``bearings`` together with
    the observer ``origins`` they were taken from (bearing-only view).
    """

    positions: np.ndarray | None = None
    bearings: np.ndarray | None = None
    origins: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.positions) if self.positions is not None else len(self.bearings)

    @classmethod
    def from_positions(cls, positions) -> "Track":
        return cls(positions=np.asarray(positions, dtype=float).reshape(-1, 2))

    @classmethod
    def from_bearings(cls, origins, bearings) -> "Track":
        return cls(bearings=np.asarray(bearings, dtype=float).ravel(),
                   origins=np.asarray(origins, dtype=float).reshape(-1, 2))

    def through(self, modality: Modality, origins=None) -> "Track":
        """Re-express a position track as ``modality`` would measure it from ``origins``."""
        if modality is Modality.RANGE or self.positions is None:
            return self
        origins = np.asarray(origins, dtype=float).reshape(-1, 2)
        return Track.from_bearings(origins, _bearings(self.positions, origins))


def salience_row(track: Track, goals, modality: Modality, params: SalienceParams) -> np.ndarray:
    """Salience of one subject's track against every goal, shape (n_goals,)."""
    goals = goal_array(goals)
    n = len(track)
    steps = min(params.window, n - 1)
    if steps <= 0:
        return np.full(len(goals), params.h_neutral)
    if modality is Modality.RANGE:
        if track.positions is None:
            raise ValueError("range salience needs a position track")
        return range_salience(track.positions[-1 - steps], track.positions[-1], goals, steps, params)
    if track.bearings is None:
        raise ValueError("bearing salience needs bearings; project the track first")
    return bearing_salience(track.bearings[-1 - steps], track.bearings[-1], track.origins[-1],
                            goals, steps, params)


def salience(track: Track, goal: Goal, modality: Modality, params: SalienceParams) -> float:
    return float(salience_row(track, [goal], modality, params)[0])


@dataclass
class RobotView:
    """Everything one robot has measured so far, aligned by time step."""

    owner: int
    modalities: tuple[Modality, ...]
    own_positions: list[tuple[float, float]] = field(default_factory=list)
    # positions only exist for subjects measured with a range sensor
    est_positions: dict[int, list[tuple[float, float]]] = field(default_factory=dict)
    est_bearings: dict[int, list[float]] = field(default_factory=dict)

    @property
    def modality(self) -> Modality:
        return self.modalities[self.owner]

    @property
    def n_robots(self) -> int:
        return len(self.modalities)

    def record(self, own_position, bearings: Mapping[int, float],
               ranges: Mapping[int, float] | None = None) -> None:
        """Append one step of filtered measurements."""
        ox, oy = float(own_position[0]), float(own_position[1])
        self.own_positions.append((ox, oy))
        for subject, theta in bearings.items():
            self.est_bearings.setdefault(subject, []).append(float(theta))
            if ranges is not None and subject in ranges:
                r = ranges[subject]
                self.est_positions.setdefault(subject, []).append(
                    (ox + r * math.cos(theta), oy + r * math.sin(theta)))

    def has_positions(self, subject: int) -> bool:
        return subject == self.owner or subject in self.est_positions

    def positions_of(self, subject: int, tail: int | None = None) -> np.ndarray:
        seq = self.own_positions if subject == self.owner else self.est_positions[subject]
        if tail is not None:
            seq = seq[-tail:]
        return np.array(seq, dtype=float).reshape(-1, 2)

    def origin_of(self, robot: int, tail: int | None = None) -> np.ndarray:
        """Best location estimate for ``robot``.

        A bearing-only owner cannot place a peer and uses its own location.
        """
        if self.has_positions(robot):
            return self.positions_of(robot, tail)
        return self.positions_of(self.owner, tail)

    def measured_track(self, subject: int, tail: int | None = None) -> Track:
        """The subject's track as measured with the owner's own sensor."""
        if self.has_positions(subject):
            return Track.from_positions(self.positions_of(subject, tail))
        bearings = self.est_bearings.get(subject, [])
        if tail is not None:
            bearings = bearings[-tail:]
        return Track.from_bearings(self.positions_of(self.owner, len(bearings)), bearings)

    def perceived_track(self, subject: int, through: Modality, from_robot: int,
                        tail: int | None = None) -> Track:
        """The subject's track as ``from_robot`` would measure it with ``through``.

        Without position estimates the owner's own bearing track stands in.
        """
        track = self.measured_track(subject, tail)
        if track.positions is None or through is Modality.RANGE:
            return track
        return track.through(through, self.origin_of(from_robot, len(track)))


@dataclass(frozen=True)
class ReasoningScope:
    max_order: int
    perspective_sets: Mapping[int, frozenset[int]]

    def __post_init__(self) -> None:
        if self.max_order not in (0, 1, 2, 3):
            raise ValueError("max_order must be in {0, 1, 2, 3}")

    @property
    def orders(self) -> range:
        return range(self.max_order + 1)


def build_scope(owner: int, modalities: Sequence[Modality], max_order: int) -> ReasoningScope:
    """Perspective sets per order; orders 2 and 3 keep only abstractable peers.

    Taking a peer's perspective also requires placing the peer, which a
    bearing-only owner cannot do, so its higher-order sets are empty.
    """
    others = frozenset(r for r in range(len(modalities)) if r != owner)
    me = modalities[owner]
    peers = frozenset(r for r in others if me is Modality.RANGE and me.can_abstract(modalities[r]))
    sets = {0: frozenset({owner}), 1: others, 2: peers, 3: peers}
    return ReasoningScope(max_order, {k: v for k, v in sets.items() if k <= max_order})


@dataclass(frozen=True)
class EvidenceMatrix:
    values: np.ndarray
    order: int
    perspective_owner: int


def _to_evidence(h, params: SalienceParams) -> np.ndarray:
    return np.exp(-np.asarray(h) / params.eta)


def evidence_at_order(view: RobotView, goals, scope: ReasoningScope, k: int,
                      params: SalienceParams) -> EvidenceMatrix:
    """Evidence matrix (n_robots x n_goals) for reasoning order ``k``."""
    if k > scope.max_order or k < 0:
        raise ValueError(f"order {k} outside scope (max {scope.max_order})")
    goals = goal_array(goals)
    n, i = view.n_robots, view.owner
    tail = params.window + 1
    values = np.zeros((n, len(goals)))
    if k == 0:
        values[i] = _to_evidence(salience_row(view.measured_track(i, tail), goals, Modality.RANGE, params), params)
    elif k == 1:
        for a in sorted(scope.perspective_sets[1]):
            track = view.measured_track(a, tail)
            values[a] = _to_evidence(salience_row(track, goals, view.modality, params), params)
    elif k == 2:
        for r in sorted(scope.perspective_sets[2]):
            through = view.modalities[r]
            track = view.perceived_track(i, through, r, tail)
            values[i] += _to_evidence(salience_row(track, goals, through, params), params)
    else:
        for r in sorted(scope.perspective_sets[3]):
            through = view.modalities[r]
            for b in range(n):
                if b in (i, r):
                    continue
                track = view.perceived_track(b, through, r, tail)
                values[b] += _to_evidence(salience_row(track, goals, through, params), params)
    return EvidenceMatrix(values, k, i)


def aggregate_orders(matrices: Sequence[EvidenceMatrix | np.ndarray]) -> np.ndarray:
    """Elementwise sum of the per-order evidence matrices."""
    if not matrices:
        raise ValueError("no evidence matrices to aggregate")
    arrays = [m.values if isinstance(m, EvidenceMatrix) else np.asarray(m, dtype=float) for m in matrices]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"dimension mismatch: {a.shape} vs {shape}")
    total = np.zeros(shape)
    for a in arrays:
        total = total + a
    return total


def own_rows(view: RobotView, goals, scope: ReasoningScope, params: SalienceParams,
             next_positions=None) -> np.ndarray:
    """Summed k=0 and k=2 evidence the owner's own motion contributes to its row.

    With ``next_positions`` of shape (C, 2) the own track is extended by one
    hypothetical step per candidate; peers are assumed to stay where last
    seen. Returns shape (C, n_goals), or (n_goals,) without candidates.
    """
    goals = goal_array(goals)
    hist = view.positions_of(view.owner, params.window + 1)
    if next_positions is None:
        steps = min(params.window, len(hist) - 1)
        ref, last = hist[-1 - steps], hist[-1]
        ref_idx = len(hist) - 1 - steps
    else:
        last = np.asarray(next_positions, dtype=float).reshape(-1, 2)
        steps = min(params.window, len(hist))
        ref_idx = len(hist) - steps
        ref = hist[ref_idx]
    row = _to_evidence(motion_salience(ref, last, steps, Modality.RANGE, goals, params), params)
    if scope.max_order >= 2:
        for r in sorted(scope.perspective_sets[2]):
            through = view.modalities[r]
            origins = view.origin_of(r, params.window + 1)
            # origins align index-for-index with hist
            h = motion_salience(ref, last, steps, through, goals, params,
                                origin_ref=origins[ref_idx], origin_last=origins[-1])
            row = row + _to_evidence(h, params)
    return row
