"""Behaviour cloning on (surrogate) demonstrations and policy evaluation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import ConstraintSpec, is_feasible, project
from .data import Dataset, dump_record, fmt_real
from .dtw import NormalizationStats, dtw_distance, minmax_normalize
from .envs import Environment, env_step
from .mlp import EnsembleMLP, make_optimizer


@dataclass
class BCConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    hidden: int = 64
    n_hidden: int = 2
    optimizer: str = "adam"


class PolicyNet:
    """Deterministic MLP policy ``s -> a`` with standardised inputs and targets."""

    def __init__(self, d_s, d_a, hidden=64, n_hidden=2, rng=None):
        self.d_s, self.d_a = int(d_s), int(d_a)
        self.hidden, self.n_hidden = int(hidden), int(n_hidden)
        self.net = EnsembleMLP([self.d_s] + [self.hidden] * self.n_hidden + [self.d_a], 1, rng=rng)
        self.in_mean = np.zeros(self.d_s)
        self.in_std = np.ones(self.d_s)
        self.out_mean = np.zeros(self.d_a)
        self.out_std = np.ones(self.d_a)

    def set_stats(self, s, a):
        self.in_mean, self.in_std = s.mean(0), s.std(0)
        self.out_mean, self.out_std = a.mean(0), a.std(0)
        self.in_std = np.where(self.in_std < 1e-8, 1.0, self.in_std)
        self.out_std = np.where(self.out_std < 1e-8, 1.0, self.out_std)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        x = (s - self.in_mean) / self.in_std
        out, _ = self.net.forward(np.atleast_2d(x), member=0)
        a = self.out_mean + self.out_std * out
        return a[0] if s.ndim == 1 else a

    def loss_and_grads(self, s, a):
        """Mean squared error in standardised action units and its gradients."""
        x = (np.atleast_2d(s) - self.in_mean) / self.in_std
        y = (np.atleast_2d(a) - self.out_mean) / self.out_std
        out, cache = self.net.forward(x, member=0)
        r = out - y
        n = len(x)
        loss = float(np.sum(r * r) / n)
        grads = self.net.backward(cache, 2.0 * r / n, member=0)
        return loss, grads

    def loss_and_flat_grad(self, s, a):
        loss, grads = self.loss_and_grads(s, a)
        return loss, np.concatenate([g.ravel() for g in grads])

    def to_record(self):
        return {
            "kind": "policy",
            "d_s": self.d_s,
            "d_a": self.d_a,
            "hidden": self.hidden,
            "n_hidden": self.n_hidden,
            "in_mean": self.in_mean,
            "in_std": self.in_std,
            "out_mean": self.out_mean,
            "out_std": self.out_std,
            "params": self.net.get_flat(0),
        }

    @classmethod
    def from_record(cls, rec):
        p = cls(rec["d_s"], rec["d_a"], rec["hidden"], rec["n_hidden"])
        for k in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(p, k, np.asarray(rec[k], dtype=float))
        p.net.set_flat(0, rec["params"])
        return p

    def save(self, path):
        Path(path).write_text(dump_record(self.to_record()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_record(json.loads(Path(path).read_text()))


def train_bc(ds: Dataset, cfg: BCConfig, rng, history=None) -> PolicyNet:
    """Regress actions on states by mini-batch MSE minimisation.

    ``history`` (a list) receives the full-dataset loss before training and
    after every epoch.
    """
    if ds is None or len(ds) == 0 or ds.n_transitions() == 0:
        raise ValueError("behaviour cloning needs a non-empty dataset")
    rng = np.random.default_rng(rng)
    s, a = ds.state_action_pairs()
    policy = PolicyNet(s.shape[1], a.shape[1], cfg.hidden, cfg.n_hidden,
                       rng=np.random.default_rng(rng.integers(2**63)))
    policy.set_stats(s, a)
    params = policy.net.params
    opt = make_optimizer(cfg.optimizer, params, cfg.lr)
    n = len(s)
    bs = min(cfg.batch_size, n)
    if history is not None:
        history.append(policy.loss_and_grads(s, a)[0])
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for k in range(0, n - bs + 1, bs):
            idx = perm[k : k + bs]
            _, grads = policy.loss_and_grads(s[idx], a[idx])
            opt.step(params, grads)
        if history is not None:
            history.append(policy.loss_and_grads(s, a)[0])
    return policy


# -- evaluation ------------------------------------------------------------

class Controller:
    """Closed-loop controller interface used by the evaluator."""

    def reset(self, s0):
        pass

    def act(self, s, t):
        """Action for state ``s`` at step ``t``; ``None`` ends the episode."""
        raise NotImplementedError


class PolicyController(Controller):
    def __init__(self, policy):
        self.policy = policy

    def act(self, s, t):
        return self.policy(s)


class ReplayController(Controller):
    """Open-loop replay of the demo whose start state is nearest to ``s0``."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self.actions = None

    def reset(self, s0):
        self.actions = self.ds[nearest_trajectory(self.ds, s0)].actions

    def act(self, s, t):
        return self.actions[t] if t < len(self.actions) else None


def as_controller(policy) -> Controller:
    return policy if isinstance(policy, Controller) else PolicyController(policy)


def nearest_trajectory(ds: Dataset, s0) -> int:
    starts = np.array([t.states[0] for t in ds])
    d = np.linalg.norm(starts - np.asarray(s0), axis=1)
    return int(np.argmin(d))


@dataclass
class EpisodeResult:
    seed: int
    episode: int
    ret: float
    dtw: float
    success: bool
    length: int
    feasible: bool
    anchor: int


@dataclass
class EvalReport:
    return_mean: float
    return_std: float
    dtw_mean: float
    dtw_std: float
    success_rate: float
    success_std: float
    episodes: int
    seeds: list[int]
    feasible_fraction: float
    normalized: bool = False
    results: list[EpisodeResult] = field(default_factory=list, repr=False)

    CSV_COLUMNS = ["method", "return_mean", "return_std", "dtw_mean", "dtw_std", "success_rate",
                   "success_std", "episodes", "seeds", "feasible_fraction", "dtw_anchor"]

    @classmethod
    def from_results(cls, results, normalized=False) -> "EvalReport":
        """Means over all episodes; spreads are std across per-seed means."""
        if not results:
            raise ValueError("no episodes to aggregate")
        results = sorted(results, key=lambda r: (r.seed, r.episode))
        seeds = sorted({r.seed for r in results})

        def stat(get):
            vals = np.array([get(r) for r in results], dtype=float)
            per_seed = [np.mean([get(r) for r in results if r.seed == sd]) for sd in seeds]
            return float(vals.mean()), float(np.std(per_seed))

        rm, rs = stat(lambda r: r.ret)
        dm, ds_ = stat(lambda r: r.dtw)
        sm, ss = stat(lambda r: float(r.success))
        feas = float(np.mean([r.feasible for r in results]))
        return cls(rm, rs, dm, ds_, sm, ss, len(results), seeds, feas, normalized, results)

    def csv_row(self, method):
        return [method, fmt_real(self.return_mean), fmt_real(self.return_std), fmt_real(self.dtw_mean),
                fmt_real(self.dtw_std), fmt_real(self.success_rate), fmt_real(self.success_std),
                self.episodes, " ".join(str(s) for s in self.seeds), fmt_real(self.feasible_fraction),
                "nearest-initial-state" + ("/normalized" if self.normalized else "")]

    def summary(self, method="policy"):
        return (f"{method}: return {self.return_mean:.3f} ± {self.return_std:.3f}, "
                f"d_DTW {self.dtw_mean:.3f} ± {self.dtw_std:.3f}, success {self.success_rate:.2f} "
                f"({self.episodes} episodes, seeds {self.seeds}, feasible {self.feasible_fraction:.0%})")


def write_report_csv(path, rows):
    """``rows``: iterable of ``(method, EvalReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EvalReport.CSV_COLUMNS)
        for method, rep in rows:
            w.writerow(rep.csv_row(method))


def run_episode(env: Environment, controller: Controller, spec: ConstraintSpec, s0, max_steps=None):
    """Roll out with the projection layer applied to every action."""
    max_steps = env.max_steps if max_steps is None else max_steps
    s = np.asarray(s0, dtype=float)
    controller.reset(s)
    states, actions = [s], []
    total, done, feasible = 0.0, False, True
    for t in range(max_steps):
        raw = controller.act(s, t)
        if raw is None:
            break
        a = project(raw, s, spec)
        feasible &= bool(is_feasible(a, s, spec))
        s, r, done = env_step(env, s, a)
        states.append(s)
        actions.append(a)
        total += r
        if done:
            break
    return np.array(states), np.array(actions), total, done, feasible


def evaluate_policy(policy, env: Environment, spec: ConstraintSpec, expert_ds: Dataset, episodes: int,
                    seeds, normalized=False, start_states=None, max_steps=None) -> EvalReport:
    """Evaluate ``policy`` under inference-time projection.

    ``policy`` is a ``Controller``, a callable ``s -> a``, or a mapping from
    seed to either (one trained policy per seed). Start states come from the
    environment's sampler seeded by each seed, unless ``start_states`` is
    given. d_DTW is measured against the expert trajectory whose start state
    is nearest to the episode's.
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    results = []
    for seed in seeds:
        pol = policy[seed] if isinstance(policy, dict) else policy
        ctrl = as_controller(pol)
        rng = np.random.default_rng(seed)
        for ep in range(episodes):
            if start_states is not None:
                s0 = np.asarray(start_states[ep % len(start_states)], dtype=float)
            else:
                s0 = env.sample_initial_state(rng)
            states, _, ret, done, feas = run_episode(env, ctrl, spec, s0, max_steps)
            k = nearest_trajectory(expert_ds, s0)
            ref = expert_ds[k].states
            if normalized:
                st = NormalizationStats.from_sequence(ref)
                d = dtw_distance(minmax_normalize(states, st), minmax_normalize(ref, st)).cost
            else:
                d = dtw_distance(states, ref).cost
            results.append(EpisodeResult(int(seed), ep, ret, d, bool(done and env.is_goal(states[-1])),
                                         len(states) - 1, feas, k))
    return EvalReport.from_results(results, normalized)
