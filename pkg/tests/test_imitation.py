import csv

import numpy as np
import pytest

from acil.constraints import Box, Unconstrained, WeightedAbsSum, is_feasible
from acil.data import Dataset, Trajectory
from acil.envs import PointMassMaze, generate_expert_dataset, scripted_expert
from acil.imitation import (BCConfig, Controller, EpisodeResult, EvalReport, PolicyNet, ReplayController,
                            evaluate_policy, nearest_trajectory, run_episode, train_bc, write_report_csv)


@pytest.fixture(scope="module")
def maze_ds():
    return generate_expert_dataset(PointMassMaze(), 3, 400, 0)


def tiny_dataset(seed=0):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(11, 4))
    a = rng.normal(size=(10, 2))
    return Dataset([Trajectory(s, a)], {"env": "maze", "d_s": 4, "d_a": 2})


def test_memorises_tiny_dataset():
    ds = tiny_dataset()
    policy = train_bc(ds, BCConfig(epochs=3000, batch_size=10, lr=3e-3), 0)
    s, a = ds.state_action_pairs()
    assert np.mean((policy(s) - a) ** 2) < 1e-3


def test_deterministic_and_loss_decreases():
    ds = tiny_dataset()
    for seed in range(3):
        hist = []
        p1 = train_bc(ds, BCConfig(epochs=20, batch_size=4), seed, hist)
        p2 = train_bc(ds, BCConfig(epochs=20, batch_size=4), seed)
        assert p1.net.get_flat(0).tobytes() == p2.net.get_flat(0).tobytes()
        assert hist[-1] < hist[0]
        assert len(hist) == 21


def test_empty_dataset_rejected():
    ds = Dataset([Trajectory(np.zeros((1, 4)), np.zeros((0, 2)))], {})
    with pytest.raises(ValueError):
        train_bc(ds, BCConfig(), 0)


def test_bc_gradient_check():
    rng = np.random.default_rng(1)
    p = PolicyNet(3, 2, hidden=6, rng=rng)
    s, a = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    p.set_stats(s, a)
    theta = p.net.get_flat(0)
    _, g = p.loss_and_flat_grad(s, a)
    eps = 1e-5
    for k in rng.choice(theta.size, size=20, replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += eps
        tm[k] -= eps
        p.net.set_flat(0, tp)
        lp, _ = p.loss_and_flat_grad(s, a)
        p.net.set_flat(0, tm)
        lm, _ = p.loss_and_flat_grad(s, a)
        num = (lp - lm) / (2 * eps)
        assert abs(num - g[k]) / max(abs(num), abs(g[k]), 1e-8) < 1e-4
    p.net.set_flat(0, theta)


def test_policy_checkpoint_round_trip(tmp_path):
    p = train_bc(tiny_dataset(), BCConfig(epochs=2), 0)
    p.save(tmp_path / "p.json")
    q = PolicyNet.load(tmp_path / "p.json")
    s = np.random.default_rng(0).normal(size=(5, 4))
    assert p(s).tobytes() == q(s).tobytes()
    assert p(s[0]).shape == (2,)


class ExpertController(Controller):
    def __init__(self, env):
        self.env = env

    def act(self, s, t):
        return scripted_expert(self.env, s)


def test_expert_self_evaluation_has_zero_dtw(maze_ds):
    env = PointMassMaze()
    starts = [t.states[0] for t in maze_ds]
    rep = evaluate_policy(ExpertController(env), env, Unconstrained(), maze_ds, 3, [0], start_states=starts)
    assert rep.dtw_mean < 1e-6
    assert rep.success_rate == 1.0 and rep.return_mean == 1.0
    assert [r.anchor for r in rep.results] == [0, 1, 2]


@pytest.mark.parametrize("spec", [Box(0.1), WeightedAbsSum((2, 3), 0.05)])
def test_inference_projection_feasible(maze_ds, spec):
    env = PointMassMaze()
    policy = train_bc(maze_ds, BCConfig(epochs=5), 0)

    class Recording(Controller):
        def act(self, s, t):
            return policy(s)

    states, actions, _, _, feasible = run_episode(env, Recording(), spec, maze_ds[0].states[0], 100)
    assert feasible
    assert all(is_feasible(a, s, spec) for s, a in zip(states[:-1], actions))


def test_report_determinism_and_aggregation(maze_ds):
    env = PointMassMaze()
    policy = train_bc(maze_ds, BCConfig(epochs=5), 0)
    r1 = evaluate_policy(policy, env, Box(0.1), maze_ds, 2, [1, 2], max_steps=50)
    r2 = evaluate_policy(policy, env, Box(0.1), maze_ds, 2, [1, 2], max_steps=50)
    assert r1.csv_row("p") == r2.csv_row("p")
    assert r1.episodes == 4 and r1.seeds == [1, 2]
    assert r1.dtw_std >= 0 and r1.return_std >= 0
    rn = evaluate_policy(policy, env, Box(0.1), maze_ds, 2, [1, 2], normalized=True, max_steps=50)
    assert rn.dtw_mean < r1.dtw_mean and rn.normalized
    with pytest.raises(ValueError):
        evaluate_policy(policy, env, Box(0.1), maze_ds, 0, [1])


def test_report_std_across_seed_means():
    res = [EpisodeResult(0, 0, 1.0, 2.0, True, 5, True, 0), EpisodeResult(0, 1, 0.0, 4.0, False, 5, True, 0),
           EpisodeResult(1, 0, 1.0, 6.0, True, 5, True, 0)]
    rep = EvalReport.from_results(res)
    assert rep.dtw_mean == 4.0
    assert rep.dtw_std == pytest.approx(np.std([3.0, 6.0]))
    assert rep.success_rate == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        EvalReport.from_results([])


def test_replay_controller(maze_ds):
    env = PointMassMaze()
    ctrl = ReplayController(maze_ds)
    s0 = maze_ds[2].states[0] + 1e-3
    assert nearest_trajectory(maze_ds, s0) == 2
    states, actions, *_ = run_episode(env, ctrl, Box(0.1), s0, 1000)
    assert len(actions) == len(maze_ds[2])
    np.testing.assert_array_equal(actions, np.clip(maze_ds[2].actions, -0.1, 0.1))


def test_report_csv_schema(tmp_path, maze_ds):
    env = PointMassMaze()
    rep = evaluate_policy(ReplayController(maze_ds), env, Box(0.1), maze_ds, 1, [0])
    write_report_csv(tmp_path / "r.csv", [("a", rep), ("b", rep)])
    rows = list(csv.reader((tmp_path / "r.csv").open()))
    assert rows[0] == EvalReport.CSV_COLUMNS
    assert all(len(r) == len(rows[0]) for r in rows)
    assert rows[1][0] == "a" and rows[1][-1] == "nearest-initial-state"
