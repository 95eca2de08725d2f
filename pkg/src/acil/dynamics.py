"""Probabilistic ensemble forward model.

Each member maps ``(s, a)`` to a diagonal Gaussian over the next state. The
networks work on standardised inputs and predict standardised state deltas;
``predict`` converts back to absolute next states. Log-variances are softly
bounded to ``[logvar_min, logvar_max]`` in standardised delta units, so the
noise floor scales with each state dimension's typical step size.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, dump_record
from .mlp import EnsembleMLP, make_optimizer


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_clamp(x, lo, hi):
    """Smoothly squash ``x`` into ``[lo, hi]``; returns value and derivative."""
    u = hi - softplus(hi - x)
    du = sigmoid(hi - x)
    y = lo + softplus(u - lo)
    dy = sigmoid(u - lo) * du
    return np.clip(y, lo, hi), dy


def gaussian_nll(mean, log_var, target):
    """``sum (mean - target)^2 / var + log var`` over all entries (constants dropped)."""
    mean, log_var, target = (np.asarray(x, dtype=float) for x in (mean, log_var, target))
    return float(np.sum((mean - target) ** 2 * np.exp(-log_var) + log_var))


@dataclass(frozen=True)
class GaussianPrediction:
    mean: np.ndarray
    log_var: np.ndarray


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9


class ReplayBuffer:
    """Growing set of ``(s, a, s')`` transitions."""

    def __init__(self, d_s, d_a):
        self.d_s, self.d_a = d_s, d_a
        self._s, self._a, self._sn = [], [], []

    def add_trajectory(self, traj):
        self.add(*traj.transitions())

    def add(self, s, a, sn):
        """Append a batch of transitions given as aligned arrays."""
        s, a, sn = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (s, a, sn))
        if len(a) == 0:
            return
        if not len(s) == len(a) == len(sn):
            raise ValueError("transition arrays have different lengths")
        if s.shape[1] != self.d_s or sn.shape[1] != self.d_s or a.shape[1] != self.d_a:
            raise ValueError("transition dimensions do not match the buffer")
        self._s.append(s)
        self._a.append(a)
        self._sn.append(sn)

    @classmethod
    def from_dataset(cls, ds: Dataset, d_a=None):
        d_a = d_a if d_a is not None else ds.trajectories[0].actions.shape[1]
        buf = cls(ds.d_s, d_a)
        for t in ds:
            buf.add_trajectory(t)
        return buf

    def __len__(self):
        return sum(len(a) for a in self._a)

    def arrays(self):
        if not self._a:
            return np.zeros((0, self.d_s)), np.zeros((0, self.d_a)), np.zeros((0, self.d_s))
        return np.concatenate(self._s), np.concatenate(self._a), np.concatenate(self._sn)


class DynamicsEnsemble:
    def __init__(self, d_s, d_a, n_members=5, hidden=64, n_hidden=2,
                 logvar_bounds=(-10.0, 2.0), rng=None, zero=False):
        self.d_s, self.d_a = int(d_s), int(d_a)
        self.n_members = int(n_members)
        if self.n_members < 1:
            raise ValueError("ensemble needs at least one member")
        self.hidden, self.n_hidden = int(hidden), int(n_hidden)
        self.logvar_bounds = (float(logvar_bounds[0]), float(logvar_bounds[1]))
        sizes = [self.d_s + self.d_a] + [self.hidden] * self.n_hidden + [2 * self.d_s]
        self.net = EnsembleMLP(sizes, self.n_members, rng=rng, zero=zero)
        self.in_mean = np.zeros(self.d_s + self.d_a)
        self.in_std = np.ones(self.d_s + self.d_a)
        self.out_mean = np.zeros(self.d_s)
        self.out_std = np.ones(self.d_s)
        self.fitted = False

    def copy(self):
        new = DynamicsEnsemble.__new__(DynamicsEnsemble)
        new.__dict__.update(self.__dict__)
        new.net = self.net.copy()
        for k in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(new, k, getattr(self, k).copy())
        return new

    def set_stats(self, s, a, s_next):
        x = np.concatenate([s, a], axis=1)
        d = s_next - s
        self.in_mean, self.in_std = x.mean(0), x.std(0)
        self.out_mean, self.out_std = d.mean(0), d.std(0)
        self.in_std = np.where(self.in_std < 1e-8, 1.0, self.in_std)
        self.out_std = np.where(self.out_std < 1e-8, 1.0, self.out_std)
        self.fitted = True

    # -- forward ---------------------------------------------------------

    def _heads(self, out):
        lo, hi = self.logvar_bounds
        mu_n = out[..., : self.d_s]
        raw = out[..., self.d_s :]
        lv_n, dlv = soft_clamp(raw, lo, hi)
        return mu_n, lv_n + 2.0 * np.log(self.out_std), dlv

    def _inputs(self, s, a):
        x = np.concatenate([s, a], axis=-1)
        return (x - self.in_mean) / self.in_std

    def predict_batch(self, member, s, a):
        """Mean next state and absolute log-variance for rows of ``s``, ``a``."""
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        out, _ = self.net.forward(self._inputs(s, a), member=member)
        mu_n, lv, _ = self._heads(out)
        mean = s + self.out_mean + self.out_std * mu_n
        return mean, lv

    def predict(self, member, s, a) -> GaussianPrediction:
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
            raise ValueError("predict needs finite inputs")
        if s.shape[-1] != self.d_s or a.shape[-1] != self.d_a:
            raise ValueError("state/action dimensions do not match the model")
        mean, lv = self.predict_batch(member, s[None], a[None])
        return GaussianPrediction(mean[0], lv[0])

    # -- loss ------------------------------------------------------------

    def _loss_and_grads(self, x, y, member=None):
        """Summed NLL per member in standardised delta units.

        ``x`` is standardised input, ``y`` standardised delta target; both
        ``(B, N, .)`` when ``member`` is None.
        """
        out, cache = self.net.forward(x, member=member)
        mu, lv, dlv = self._heads(out)
        lv_n = lv - 2.0 * np.log(self.out_std)
        inv = np.exp(-lv_n)
        r = mu - y
        loss = np.sum(r * r * inv + lv_n, axis=(-2, -1))
        dmu = 2.0 * r * inv
        dlv_n = (1.0 - r * r * inv) * dlv
        dout = np.concatenate([dmu, dlv_n], axis=-1)
        grads = self.net.backward(cache, dout, member=member)
        return loss, grads

    def standardized(self, s, a, s_next):
        x = self._inputs(s, a)
        y = ((s_next - s) - self.out_mean) / self.out_std
        return x, y

    def nll_loss_and_grad(self, member, s, a, s_next):
        """Summed Gaussian NLL of one member on a batch and its flat gradient."""
        s, a, s_next = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (s, a, s_next))
        if len(s) == 0:
            raise ValueError("empty batch")
        x, y = self.standardized(s, a, s_next)
        loss, grads = self._loss_and_grads(x, y, member=member)
        flat = np.concatenate([g.ravel() for g in grads])
        return float(loss), flat

    def nll(self, s, a, s_next, member=None):
        """Mean per-sample NLL, averaged over members unless one is given."""
        x, y = self.standardized(s, a, s_next)
        members = range(self.n_members) if member is None else [member]
        tot = 0.0
        for b in members:
            out, _ = self.net.forward(x, member=b)
            mu, lv, _ = self._heads(out)
            lv_n = lv - 2.0 * np.log(self.out_std)
            tot += np.sum((mu - y) ** 2 * np.exp(-lv_n) + lv_n) / len(x)
        return tot / len(members)

    # -- persistence -----------------------------------------------------

    def to_record(self):
        return {
            "kind": "dynamics_ensemble",
            "d_s": self.d_s,
            "d_a": self.d_a,
            "n_members": self.n_members,
            "hidden": self.hidden,
            "n_hidden": self.n_hidden,
            "logvar_bounds": list(self.logvar_bounds),
            "in_mean": self.in_mean,
            "in_std": self.in_std,
            "out_mean": self.out_mean,
            "out_std": self.out_std,
            "fitted": self.fitted,
            "params": [self.net.get_flat(b) for b in range(self.n_members)],
        }

    @classmethod
    def from_record(cls, rec):
        m = cls(rec["d_s"], rec["d_a"], rec["n_members"], rec["hidden"], rec["n_hidden"],
                tuple(rec["logvar_bounds"]), zero=True)
        for k in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(m, k, np.asarray(rec[k], dtype=float))
        m.fitted = bool(rec["fitted"])
        for b, vec in enumerate(rec["params"]):
            m.net.set_flat(b, vec)
        return m

    def save(self, path):
        Path(path).write_text(dump_record(self.to_record()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_record(json.loads(Path(path).read_text()))


def train_ensemble(model: DynamicsEnsemble, buffer: ReplayBuffer, cfg: TrainConfig, rng) -> DynamicsEnsemble:
    """Fit every member on its own bootstrap resample of ``buffer``.

    Returns a trained copy; ``model`` is left untouched. Standardisation
    statistics are computed from the buffer the first time a model is fitted
    and kept afterwards so warm-started retraining stays consistent.
    """
    s, a, sn = buffer.arrays()
    n = len(s)
    if n == 0:
        raise ValueError("cannot train on an empty buffer")
    rng = np.random.default_rng(rng)
    model = model.copy()
    if not model.fitted:
        model.set_stats(s, a, sn)
    x, y = model.standardized(s, a, sn)
    B = model.n_members
    boot = rng.integers(0, n, size=(B, n))
    params = model.net.params
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, cfg.momentum)
    bs = min(cfg.batch_size, n)
    n_batches = max(1, n // bs)
    rows = np.arange(B)[:, None]
    for _ in range(cfg.epochs):
        perm = np.argsort(rng.random((B, n)), axis=1)
        order = boot[rows, perm]
        for k in range(n_batches):
            idx = order[:, k * bs : (k + 1) * bs]
            _, grads = model._loss_and_grads(x[idx], y[idx])
            grads = [g / bs for g in grads]
            opt.step(params, grads)
    return model


def propagate_ts(model, s0, actions, assignment, rng, call_log=None, sample=True):
    """Roll particles forward, each bound to one ensemble member throughout.

    Args:
        model: anything with ``predict_batch(member, s, a) -> (mean, log_var)``.
        s0: start state ``(d_s,)`` shared by all particles, or ``(P, d_s)``.
        actions: ``(H, d_a)`` for a single particle or ``(P, H, d_a)``.
        assignment: member index per particle, length ``P``.
        rng: ``numpy.random.Generator`` for the Gaussian draws.
        call_log: optional list receiving ``(step, particle, member)`` tuples.

    Returns:
        States of shape ``(P, H + 1, d_s)`` (or ``(H + 1, d_s)`` when a single
        action sequence was given).
    """
    actions = np.asarray(actions, dtype=float)
    single = actions.ndim == 2
    if single:
        actions = actions[None]
    P, H = actions.shape[:2]
    assignment = np.asarray(assignment, dtype=int).reshape(-1)
    if len(assignment) != P:
        raise ValueError("need one member per particle")
    s = np.broadcast_to(np.asarray(s0, dtype=float), (P, np.shape(s0)[-1])).copy()
    states = np.empty((P, H + 1, s.shape[1]))
    states[:, 0] = s
    for h in range(H):
        s = step_particles(model, s, actions[:, h], assignment, rng, sample)
        if call_log is not None:
            call_log.extend((h, p, int(assignment[p])) for p in range(P))
        states[:, h + 1] = s
    return states[0] if single else states


def step_particles(model, s, a, assignment, rng, sample=True):
    """One TS step for a batch of particles (``s``: ``(P, d_s)``)."""
    out = np.empty_like(s)
    noise = rng.standard_normal(s.shape) if sample else None
    for b in np.unique(assignment):
        rows = assignment == b
        mean, lv = model.predict_batch(int(b), s[rows], a[rows])
        if sample:
            std = np.exp(0.5 * lv)
            mean = mean + std * noise[rows]
        out[rows] = mean
    return out
