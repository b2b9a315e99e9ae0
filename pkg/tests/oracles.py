"""Independent reference implementations used to cross-check the package.

Everything here is written with plain loops and the standard library so it
shares no code path with the vectorised implementations under test.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter


def valid_config(config, mission: str, quotas=None) -> bool:
    tally = Counter(config)
    n_goals = len(quotas) if quotas is not None else None
    if mission == "rendezvous":
        return len(tally) == 1
    if mission == "one_to_one":
        return len(tally) == len(config)
    if mission == "quota":
        return all(tally.get(j, 0) == q for j, q in enumerate(quotas))
    if mission == "cover":
        return len(tally) == n_goals
    raise ValueError(mission)


def brute_joint(probs, valid_set):
    """Product over every tuple of G^n, keep the valid ones, normalise."""
    n, m = len(probs), len(probs[0])
    weights = {}
    for config in itertools.product(range(m), repeat=n):
        w = 1.0
        for r, g in enumerate(config):
            w *= probs[r][g]
        if config in valid_set:
            weights[config] = w
    total = sum(weights.values())
    if total == 0.0:
        return {c: 1.0 / len(weights) for c in weights}
    return {c: w / total for c, w in weights.items()}


def softmax(row):
    exps = [math.exp(x) for x in row]
    s = sum(exps)
    return [e / s for e in exps]


def range_salience(ref, last, goal, steps, w_align=1.0, w_approach=1.0, v_max=1.0, dt=1.0):
    """Scalar salience: misalignment from the displacement midpoint plus approach deficit."""
    dx, dy = last[0] - ref[0], last[1] - ref[1]
    mx, my = (ref[0] + last[0]) / 2, (ref[1] + last[1]) / 2
    gx, gy = goal[0] - mx, goal[1] - my
    nd, ng = math.hypot(dx, dy), math.hypot(gx, gy)
    if ng == 0.0:
        angle = 0.0
    else:
        cosang = max(-1.0, min(1.0, (dx * gx + dy * gy) / (nd * ng)))
        angle = math.acos(cosang)
    closing = (math.dist(ref, goal) - math.dist(last, goal)) / (steps * v_max * dt)
    deficit = min(1.0, max(0.0, 1.0 - closing))
    return w_align * angle / math.pi + w_approach * deficit


def unit_circle_ema(last, obs, alpha):
    """EMA on the circle by interpolating unit vectors (exact for alpha = 1/2)."""
    x = (1 - alpha) * math.cos(last) + alpha * math.cos(obs)
    y = (1 - alpha) * math.sin(last) + alpha * math.sin(obs)
    return math.atan2(y, x)


def accessibility(posterior, threshold):
    peak = max(posterior)
    n = len(posterior)
    return {(w, v) for w in range(n) for v in range(n)
            if w == v or min(posterior[w], posterior[v]) >= threshold * peak}


def kripke_truth_set(phi, worlds, relations):
    """Worlds satisfying ``phi``, computed bottom-up over sets.

    ``phi`` is a nested tuple: ("atom", r, g), ("not", f), ("and", f, g),
    ("K", i, f) or ("B", i, f). ``relations[i]`` is a set of pairs.
    """
    tag = phi[0]
    all_w = set(range(len(worlds)))
    if tag == "atom":
        return {w for w in all_w if worlds[w][phi[1]] == phi[2]}
    if tag == "not":
        return all_w - kripke_truth_set(phi[1], worlds, relations)
    if tag == "and":
        return kripke_truth_set(phi[1], worlds, relations) & kripke_truth_set(phi[2], worlds, relations)
    inner = kripke_truth_set(phi[2], worlds, relations)
    rel = relations[phi[1]]
    return {w for w in all_w if all(v in inner for (u, v) in rel if u == w)}


def best_assignment_cost(costs, tasks):
    """Minimum cost of giving each task in ``tasks`` a distinct robot (permutation search)."""
    n = len(costs)
    best = math.inf
    for robots in itertools.permutations(range(n), len(tasks)):
        best = min(best, sum(costs[r][t] for r, t in zip(robots, tasks)))
    return best


def subset_value(beliefs, task_costs, assign_costs, lower_costs, subset):
    if not subset:
        return 0.0
    n = len(beliefs)
    if len(subset) > n:
        return -math.inf
    support = sum(beliefs[r][t] for r in range(n) for t in subset) - sum(task_costs[t] for t in subset)
    # charge the robots the lower level would pick
    best, charge = math.inf, 0.0
    for robots in itertools.permutations(range(n), len(subset)):
        c = sum(lower_costs[r][t] for r, t in zip(robots, subset))
        if c < best - 1e-12:
            best = c
            charge = sum(assign_costs[r][t] for r, t in zip(robots, subset))
    return support - charge


def exhaustive_best(beliefs, task_costs, assign_costs, lower_costs, tasks, K):
    n = len(beliefs)
    best = -math.inf
    for size in range(1, min(K, len(tasks), n) + 1):
        for combo in itertools.combinations(tasks, size):
            best = max(best, subset_value(beliefs, task_costs, assign_costs, lower_costs, combo))
    return best
