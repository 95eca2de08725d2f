"""Surrogate demonstration generation.

``align_trajectory`` tracks one expert trajectory with the MPC planner in the
true environment; ``dtwil_generate`` repeats that over the expert dataset,
retraining the dynamics ensemble on a growing buffer and keeping, per expert
trajectory, the surrogate closest to it in (raw) DTW distance.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSpec, is_feasible, project
from .data import Dataset, Trajectory, fmt_real, write_dataset
from .dtw import NormalizationStats, dtw_distance
from .dynamics import DynamicsEnsemble, ReplayBuffer, TrainConfig, train_ensemble
from .envs import Environment, env_step
from .planner import CemConfig, ErcConfig, plan_step

log = logging.getLogger(__name__)


class AlignmentError(RuntimeError):
    pass


@dataclass
class AlignmentConfig:
    episodes: int = 10
    max_length_factor: float = 3.0
    cem: CemConfig = field(default_factory=CemConfig)
    erc: ErcConfig = field(default_factory=ErcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    retrain_epochs: int = 10
    n_members: int = 5
    hidden: int = 64
    seed: int = 0
    inject_expert: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


@dataclass
class AlignmentTrace:
    """Per-step diagnostics of one alignment episode."""

    t_pg: list[int] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    fallbacks: int = 0


def align_trajectory(expert: Trajectory, env: Environment, model, spec: ConstraintSpec,
                     cfg: AlignmentConfig, rng, trace: AlignmentTrace | None = None) -> Trajectory:
    """Generate one constraint-feasible surrogate for ``expert``.

    The episode starts from the expert's first state and stops when the
    progression index reaches the last matchable expert state, the
    environment terminates, or ``max_length_factor * len(expert)`` steps pass.
    With the final segment state excluded from scoring, the last expert
    state can never be matched ahead of the current one, so the last
    matchable index is one before the end.
    """
    rng = np.random.default_rng(rng)
    cem = cfg.cem
    n_exp = len(expert)
    max_len = max(1, int(math.ceil(cfg.max_length_factor * n_exp)))
    stats = NormalizationStats.from_sequence(expert.states)
    s = expert.states[0].copy()
    states, actions = [s], []
    last = n_exp - 1 if cem.exclude_final_state else n_exp
    t_pg = 0
    mean = None
    done = False
    while t_pg < last and not done and len(actions) < max_len:
        extra = None
        if cfg.inject_expert:
            seg = expert.actions[t_pg : t_pg + cem.horizon]
            pad = np.zeros((cem.horizon - len(seg), expert.actions.shape[1]))
            extra = np.concatenate([seg, pad])[None]
        res = plan_step(model, s, expert, t_pg, cem, cfg.erc, spec, rng, init_mean=mean, stats=stats,
                        extra_candidates=extra, action_limit=env.action_limit)
        if trace is not None:
            trace.fallbacks += res.fallbacks
        for k in range(cem.steps_per_plan):
            a = res.action if k == 0 else project(res.actions[k], s, spec)
            if not is_feasible(a, s, spec):
                raise AlignmentError("planner produced an infeasible action")
            s_next, _, done = env_step(env, s, a)
            if not np.all(np.isfinite(s_next)):
                raise AlignmentError(f"environment returned a non-finite state at step {len(actions)}")
            actions.append(a)
            states.append(s_next)
            t_pg += res.advancements[k]
            if trace is not None:
                trace.t_pg.append(t_pg)
                trace.costs.append(res.cost)
            s = s_next
            if t_pg >= last or done or len(actions) >= max_len:
                break
        step = k + 1
        mean = np.concatenate([res.mean[step:], np.zeros((step, res.mean.shape[1]))])
    d_a = expert.actions.shape[1]
    return Trajectory(np.array(states), np.array(actions).reshape(-1, d_a))


@dataclass
class SurrogateDataset:
    """Best surrogate found so far for every expert trajectory slot."""

    n_slots: int
    trajectories: list[Trajectory | None] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.trajectories:
            self.trajectories = [None] * self.n_slots
            self.costs = [math.inf] * self.n_slots

    def offer(self, i: int, traj: Trajectory, cost: float) -> bool:
        """Install ``traj`` in slot ``i`` iff it is strictly closer."""
        if cost < self.costs[i]:
            self.trajectories[i] = traj
            self.costs[i] = cost
            return True
        return False

    def filled(self):
        return [t for t in self.trajectories if t is not None]

    def to_dataset(self, meta) -> Dataset:
        return Dataset(self.filled(), dict(meta))

    def write(self, path, meta):
        extras = [{"slot": i, "dtw": c} for i, c in enumerate(self.costs) if self.trajectories[i] is not None]
        write_dataset(path, self.to_dataset(meta), extras)


@dataclass
class EpisodeRecord:
    episode: int
    index: int
    length: int
    dtw: float
    installed: bool
    wall_time: float


def dtwil_generate(expert_ds: Dataset, env: Environment, spec: ConstraintSpec, cfg: AlignmentConfig,
                   rng=None, on_episode=None):
    """Run the outer surrogate-generation loop.

    Returns ``(surrogates, records, model)``. ``on_episode`` (if given) is
    called after every episode with ``(record, surrogate, surrogates, buffer)``
    where ``surrogate`` is the trajectory just executed.
    """
    if len(expert_ds) == 0:
        raise ValueError("expert dataset is empty")
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    d_a = expert_ds[0].actions.shape[1]
    buffer = ReplayBuffer.from_dataset(expert_ds, d_a)
    model = DynamicsEnsemble(expert_ds.d_s, d_a, n_members=cfg.n_members, hidden=cfg.hidden,
                             rng=np.random.default_rng(rng.integers(2**63)))
    sur = SurrogateDataset(len(expert_ds))
    records = []
    for m in range(cfg.episodes):
        t0 = time.perf_counter()
        i = m % len(expert_ds)
        tcfg = cfg.train
        if model.fitted:
            tcfg = TrainConfig(cfg.retrain_epochs, tcfg.batch_size, tcfg.lr, tcfg.optimizer, tcfg.momentum)
        model = train_ensemble(model, buffer, tcfg, rng.integers(2**63))
        expert = expert_ds[i]
        try:
            traj = align_trajectory(expert, env, model, spec, cfg, rng.integers(2**63))
        except AlignmentError as exc:
            log.warning("episode %d (trajectory %d) aborted: %s", m, i, exc)
            continue
        buffer.add_trajectory(traj)
        cost = dtw_distance(traj.states, expert.states).cost
        installed = sur.offer(i, traj, cost)
        rec = EpisodeRecord(m, i, len(traj), cost, installed, time.perf_counter() - t0)
        records.append(rec)
        log.info("episode %d traj %d len %d (expert %d) dtw %.4f %.1fs%s", m, i, len(traj), len(expert), cost,
                 rec.wall_time, " *" if installed else "")
        if on_episode is not None:
            on_episode(rec, traj, sur, buffer)
    return sur, records, model


METRIC_COLUMNS = ["episode", "trajectory", "length", "dtw", "installed", "wall_time"]


def write_metrics(path, records, include_time=False):
    """Per-episode CSV; wall time is opt-in so the file stays reproducible."""
    cols = METRIC_COLUMNS if include_time else METRIC_COLUMNS[:-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            row = [r.episode, r.index, r.length, fmt_real(r.dtw), int(r.installed)]
            if include_time:
                row.append(f"{r.wall_time:.3f}")
            w.writerow(row)
