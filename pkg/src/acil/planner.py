"""CEM model-predictive planning step with a DTW tracking objective.

One call to :func:`plan_step` samples constraint-feasible action sequences,
mixes in projected expert actions over the first few steps, rolls every
candidate through the dynamics ensemble and scores it by DTW against the
upcoming slice of the expert state sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSpec, project
from .dtw import (
    NormalizationStats,
    dtw_cost_batch,
    dtw_distance,
    minmax_normalize,
    progression_advancement,
)
from .dynamics import step_particles


@dataclass
class CemConfig:
    population: int = 100
    elites: int = 10
    iterations: int = 5
    alpha: float = 0.1
    horizon: int = 10
    init_std: float | None = None
    max_tries: int = 10
    particles: int = 1
    steps_per_plan: int = 1
    exclude_final_state: bool = True
    sample_noise: bool = True

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if self.horizon < 1 or self.iterations < 1:
            raise ValueError("horizon and iterations must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.max_tries < 1 or self.particles < 1:
            raise ValueError("max_tries and particles must be >= 1")
        if not 1 <= self.steps_per_plan <= self.horizon:
            raise ValueError("steps_per_plan must lie in [1, horizon]")


@dataclass
class ErcConfig:
    beta: float = 0.05
    horizon: int = 5

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("ERC beta must lie in [0, 1]")
        if self.horizon < 0:
            raise ValueError("ERC horizon must be >= 0")


@dataclass
class CemDistribution:
    mean: np.ndarray  # (H, d_a)
    var: np.ndarray  # (H, d_a)


@dataclass
class PlanResult:
    action: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    cost: float
    advancement: int
    advancements: list[int] = field(default_factory=list)
    mean: np.ndarray | None = None
    fallbacks: int = 0
    costs: np.ndarray | None = None


def action_bounds(spec: ConstraintSpec, d_a: int):
    """``(lo, hi)`` for box-shaped sets, otherwise ``None``."""
    hw = spec.static_bounds()
    if hw is None:
        return None
    hw = np.broadcast_to(np.asarray(hw, dtype=float), (d_a,))
    return -hw, hw


def initial_std(cfg: CemConfig, spec: ConstraintSpec, d_a: int, action_limit: float = 1.0):
    if cfg.init_std is not None:
        return np.full(d_a, float(cfg.init_std))
    b = action_bounds(spec, d_a)
    if b is not None:
        return b[1].copy()
    return np.full(d_a, 0.5 * action_limit)


def cem_update(current: CemDistribution, elite_mean, elite_var, alpha, bounds=None, var_cap=None):
    """Momentum blend toward the elite statistics, then cap the variance.

    With ``bounds = (lo, hi)`` the variance is capped at half the distance
    from the new mean to the nearest bound. Without bounds ``var_cap`` (if
    given) is used as a fixed cap.
    """
    mean = alpha * current.mean + (1.0 - alpha) * np.asarray(elite_mean)
    var = alpha * current.var + (1.0 - alpha) * np.asarray(elite_var)
    if bounds is not None:
        lo, hi = bounds
        w = np.maximum(np.minimum(mean - lo, hi - mean), 0.0)
        var = np.minimum(var, 0.5 * w)
    elif var_cap is not None:
        var = np.minimum(var, var_cap)
    return CemDistribution(mean, var)


def sample_feasible_sequence(dist: CemDistribution, spec: ConstraintSpec, s_ref, max_tries, rng, n=None):
    """Gaussian draws, redrawn until feasible; projection after ``max_tries``.

    Step 0 is tested against ``s_ref``. Later steps of state-dependent sets
    are left to per-step projection during the rollout.

    Returns:
        ``(samples, fallbacks)`` where ``samples`` is ``(n, H, d_a)`` (or
        ``(H, d_a)`` when ``n`` is None) and ``fallbacks`` counts projected
        entries.
    """
    single = n is None
    n = 1 if single else n
    H, d_a = dist.mean.shape
    std = np.sqrt(dist.var)
    out = dist.mean + std * rng.standard_normal((n, H, d_a))

    def feasible(x):
        ok = np.ones(x.shape[:2], dtype=bool)
        ok[:, 0] = spec.is_feasible(x[:, 0], np.broadcast_to(s_ref, (len(x), len(s_ref))))
        if H > 1 and not spec.state_dependent:
            ok[:, 1:] = spec.is_feasible(x[:, 1:])
        return ok

    ok = feasible(out)
    for _ in range(max_tries - 1):
        if ok.all():
            break
        bad = np.argwhere(~ok)
        redraw = dist.mean[bad[:, 1]] + std[bad[:, 1]] * rng.standard_normal((len(bad), d_a))
        out[bad[:, 0], bad[:, 1]] = redraw
        ok = feasible(out)
    fallbacks = int((~ok).sum())
    if fallbacks:
        bad = np.argwhere(~ok)
        for h in np.unique(bad[:, 1]):
            rows = bad[bad[:, 1] == h, 0]
            s = np.broadcast_to(s_ref, (len(rows), len(s_ref))) if h == 0 else None
            out[rows, h] = spec.project(out[rows, h], s)
    return (out[0] if single else out), fallbacks


def erc_blend(sampled, expert_actions, erc: ErcConfig, spec: ConstraintSpec, predicted_states, start=0):
    """Blend sampled actions with expert actions projected at predicted states.

    ``sampled`` is ``(..., K, d_a)`` covering plan steps ``start .. start+K-1``;
    ``predicted_states`` holds the matching ``s_h`` rows. Step ``h`` is blended
    when ``h <= erc.horizon`` and an expert action exists for it.
    """
    sampled = np.asarray(sampled, dtype=float)
    out = sampled.copy()
    if erc.beta == 0.0 or expert_actions is None:
        return out
    expert_actions = np.asarray(expert_actions, dtype=float)
    predicted_states = np.asarray(predicted_states, dtype=float)
    K = sampled.shape[-2]
    for k in range(K):
        h = start + k
        if h > erc.horizon or k >= len(expert_actions):
            continue
        s_h = predicted_states[..., k, :]
        a_e = np.broadcast_to(expert_actions[k], sampled[..., k, :].shape)
        a_proj = project(a_e, s_h, spec)
        if erc.beta == 1.0:
            out[..., k, :] = a_proj
        else:
            out[..., k, :] = erc.beta * a_proj + (1.0 - erc.beta) * sampled[..., k, :]
    return out


def expert_segment(expert_states, t_pg, horizon, exclude_final=True):
    """States ``t_pg .. min(t_pg + H, end)``, final state dropped when >= 2 remain."""
    last = min(t_pg + horizon, len(expert_states) - 1)
    seg = expert_states[t_pg : last + 1]
    if exclude_final and len(seg) >= 2:
        seg = seg[:-1]
    return seg


def rollout_candidates(model, s_t, sampled, expert_actions, erc, spec, assignment, rng, sample_noise=True):
    """Apply ERC and per-step projection while propagating each candidate."""
    P, H, _ = sampled.shape
    states = np.empty((P, H + 1, len(s_t)))
    states[:, 0] = s_t
    executed = np.empty_like(sampled)
    for h in range(H):
        s_h = states[:, h]
        a = erc_blend(sampled[:, h : h + 1], expert_actions[h : h + 1] if h < len(expert_actions) else None,
                      erc, spec, s_h[:, None], start=h)[:, 0]
        a = project(a, s_h, spec)
        executed[:, h] = a
        states[:, h + 1] = step_particles(model, s_h, a, assignment, rng, sample_noise)
    return states, executed


def cem_minimize(objective, horizon, d_a, spec: ConstraintSpec, cem: CemConfig, rng, s_ref=None,
                 init_mean=None, action_limit=1.0, extra_candidates=None, log=None, on_update=None):
    """Minimise ``objective`` over feasible action sequences with momentum CEM.

    ``objective(sampled)`` receives ``(P, H, d_a)`` candidates and returns
    ``(costs, payload)``; ``payload[k]`` is kept for the best candidate seen.
    Elites are the ``cem.elites`` lowest costs, ties going to the lower index.

    Returns:
        ``(best_cost, best_sequence, best_payload, final_distribution, fallbacks)``.
    """
    H = horizon
    bounds = action_bounds(spec, d_a)
    std0 = initial_std(cem, spec, d_a, action_limit)
    mean = np.zeros((H, d_a)) if init_mean is None else np.array(init_mean, dtype=float)
    dist = CemDistribution(mean, np.broadcast_to(std0**2, (H, d_a)).copy())
    var_cap = dist.var.copy()
    if bounds is not None:
        dist = cem_update(dist, dist.mean, dist.var, 1.0, bounds)
    if s_ref is None:
        s_ref = np.zeros(0)
    best = None
    fallbacks = 0
    for it in range(cem.iterations):
        sampled, fb = sample_feasible_sequence(dist, spec, s_ref, cem.max_tries, rng, n=cem.population)
        fallbacks += fb
        if it == 0 and extra_candidates is not None:
            extra = np.asarray(extra_candidates, dtype=float).reshape(-1, H, d_a)
            sampled = np.concatenate([extra, sampled])
        costs, payload = objective(sampled)
        costs = np.asarray(costs, dtype=float)
        if log is not None:
            log.append((it, costs.copy()))
        order = np.argsort(costs, kind="stable")
        k = order[0]
        if best is None or costs[k] < best[0]:
            best = (float(costs[k]), sampled[k].copy(), None if payload is None else payload[k])
        elites = sampled[order[: cem.elites]]
        dist = cem_update(dist, elites.mean(axis=0), elites.var(axis=0), cem.alpha, bounds, var_cap)
        if on_update is not None:
            on_update(dist)
    return best[0], best[1], best[2], dist, fallbacks


def plan_step(model, s_t, expert, t_pg, cem: CemConfig, erc: ErcConfig, spec: ConstraintSpec, rng,
              init_mean=None, stats: NormalizationStats | None = None, extra_candidates=None,
              action_limit=1.0, log=None) -> PlanResult:
    """One MPC planning step toward the expert state slice starting at ``t_pg``.

    Args:
        model: dynamics model with ``n_members`` and ``predict_batch``.
        s_t: true current state.
        expert: expert ``Trajectory``.
        t_pg: progression index into the expert states.
        rng: ``numpy.random.Generator``.
        init_mean: warm-start mean ``(H, d_a)``; zeros when omitted.
        stats: normalisation stats, defaults to the expert trajectory's.
        extra_candidates: optional ``(K, H, d_a)`` sequences evaluated first
            in iteration 0 (candidate indices ``0..K-1``).
        log: optional list that receives ``(iteration, costs)`` per iteration.
    """
    expert_states = expert.states
    if not 0 <= t_pg < len(expert_states):
        raise IndexError(f"t_pg={t_pg} outside expert trajectory of {len(expert_states)} states")
    s_t = np.asarray(s_t, dtype=float)
    H = cem.horizon
    d_a = expert.actions.shape[1] if expert.actions.size else len(np.atleast_1d(init_mean[0]))
    if stats is None:
        stats = NormalizationStats.from_sequence(expert_states)
    seg = minmax_normalize(expert_segment(expert_states, t_pg, H, cem.exclude_final_state), stats)
    exp_actions = expert.actions[t_pg : t_pg + H]
    n_members = getattr(model, "n_members", 1)
    offset = [0]

    def objective(sampled):
        P = len(sampled)
        reps = np.repeat(sampled, cem.particles, axis=0)
        assign = (offset[0] + np.arange(P * cem.particles)) % n_members
        offset[0] += P * cem.particles
        states, executed = rollout_candidates(model, s_t, reps, exp_actions, erc, spec, assign, rng,
                                              cem.sample_noise)
        costs = dtw_cost_batch(minmax_normalize(states, stats), seg)
        costs = costs.reshape(P, cem.particles).mean(axis=1)
        first = np.arange(P) * cem.particles
        return costs, list(zip(states[first], executed[first]))

    cost, _, (best_states, best_actions), dist, fallbacks = cem_minimize(
        objective, H, d_a, spec, cem, rng, s_ref=s_t, init_mean=init_mean, action_limit=action_limit,
        extra_candidates=extra_candidates, log=log)
    path = dtw_distance(minmax_normalize(best_states, stats), seg).path
    adv = [progression_advancement(path, row=r) for r in range(1, cem.steps_per_plan + 1)]
    action = project(best_actions[0], s_t, spec)
    return PlanResult(action, best_states, best_actions, cost, adv[0], adv, dist.mean, fallbacks)


class OracleModel:
    """Exact simulator wrapped in the ensemble interface (zero variance)."""

    def __init__(self, env, n_members=1):
        self.env = env
        self.n_members = n_members

    def predict_batch(self, member, s, a):
        s = np.atleast_2d(s)
        a = np.atleast_2d(a)
        mean = np.array([self.env.step(si, ai)[0] for si, ai in zip(s, a)])
        return mean, np.full(mean.shape, -np.inf)
