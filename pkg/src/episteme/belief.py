"""Per-robot goal distributions, configuration likelihoods and free-energy terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationSpace

KL_FLOOR = 1e-12
SUM_TOL = 1e-9


def softmax_rows(evidence) -> np.ndarray:
    x = np.asarray(evidence, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input must be finite")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _log_joint(probs: np.ndarray, space: ConfigurationSpace) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    cfg = space.array
    return logp[..., np.arange(space.n_robots), cfg].sum(-1)


def normalize_log(logw: np.ndarray) -> np.ndarray:
    """Normalise log-weights along the last axis; all -inf rows become uniform."""
    logw = np.asarray(logw, dtype=float)
    top = logw.max(axis=-1, keepdims=True)
    dead = ~np.isfinite(top)
    w = np.exp(logw - np.where(dead, 0.0, top))
    w = np.where(dead, 1.0, w)
    return w / w.sum(axis=-1, keepdims=True)


def joint_over_configs(per_robot_goal_probs, space: ConfigurationSpace) -> np.ndarray:
    """Likelihood over valid configurations: per-robot product, restricted and renormalised.

    Accepts a leading batch axis: (..., n_robots, n_goals) -> (..., len(space)).
    If every valid configuration has zero mass the result is uniform.
    """
    probs = np.asarray(per_robot_goal_probs, dtype=float)
    if probs.shape[-2:] != (space.n_robots, space.n_goals):
        raise ValueError(f"expected (..., {space.n_robots}, {space.n_goals}) matrix, got {probs.shape}")
    return normalize_log(_log_joint(probs, space))


def bayes_update(prior, likelihood) -> np.ndarray:
    """Posterior proportional to prior * likelihood.

    When the product vanishes everywhere the likelihood is returned, so a dead
    prior can be revived by fresh evidence.
    """
    prior = np.asarray(prior, dtype=float)
    likelihood = np.asarray(likelihood, dtype=float)
    if prior.shape[-1] != likelihood.shape[-1]:
        raise ValueError(f"length mismatch: {prior.shape[-1]} vs {likelihood.shape[-1]}")
    prod = prior * likelihood
    total = prod.sum(axis=-1, keepdims=True)
    dead = total <= 0.0
    lik_total = likelihood.sum(axis=-1, keepdims=True)
    fallback = likelihood / np.where(lik_total > 0, lik_total, 1.0)
    return np.where(dead, fallback, prod / np.where(dead, 1.0, total))


def inflate(posterior, rate: float) -> np.ndarray:
    """Mix a distribution with uniform so it stays revisable."""
    p = np.asarray(posterior, dtype=float)
    return (1.0 - rate) * p + rate / p.shape[-1]


def entropy(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = -terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_divergence(p, q_target, floor: float = KL_FLOOR) -> np.ndarray | float:
    """KL(p || q_target) with the target floored before the ratio."""
    p = np.asarray(p, dtype=float)
    q = np.maximum(np.asarray(q_target, dtype=float), floor)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError("length mismatch")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    out = np.maximum(terms.sum(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FreeEnergyReport:
    entropy: float
    kl_to_target: float

    @property
    def total(self) -> float:
        return self.entropy + self.kl_to_target


def free_energy(q, target) -> FreeEnergyReport:
    return FreeEnergyReport(float(entropy(q)), float(kl_divergence(q, target)))


def is_distribution(p, tol: float = SUM_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0.0) and np.all(p <= 1.0 + tol) and np.all(np.abs(p.sum(axis=-1) - 1.0) <= tol))


@dataclass
class BeliefState:
    """One robot's beliefs: goal distribution per robot and posterior over configurations."""

    per_robot_goal_probs: np.ndarray
    posterior: np.ndarray
    prior: np.ndarray
    owner: int
    space: ConfigurationSpace

    @classmethod
    def uniform(cls, owner: int, space: ConfigurationSpace) -> "BeliefState":
        flat = np.full(len(space), 1.0 / len(space))
        goals = np.full((space.n_robots, space.n_goals), 1.0 / space.n_goals)
        return cls(goals, flat.copy(), flat, owner, space)

    def check(self) -> None:
        if not is_distribution(self.per_robot_goal_probs):
            raise AssertionError("per-robot goal rows are not distributions")
        if not (is_distribution(self.posterior) and is_distribution(self.prior)):
            raise AssertionError("posterior/prior are not distributions")
        if len(self.posterior) != len(self.space) or len(self.prior) != len(self.space):
            raise AssertionError("belief length does not match the configuration space")

    def update(self, aggregated_evidence, inflation: float = 0.05) -> "BeliefState":
        """One filtering step: inflate, compute the likelihood, apply Bayes."""
        probs = softmax_rows(aggregated_evidence)
        prior = inflate(self.posterior, inflation)
        posterior = bayes_update(prior, joint_over_configs(probs, self.space))
        return BeliefState(probs, posterior, prior, self.owner, self.space)
