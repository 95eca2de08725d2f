import numpy as np
import pytest

from acil.constraints import Box, is_feasible
from acil.data import write_dataset
from acil.envs import (DT, ExpertGains, FreeIntegrator, PointMassMaze, env_step, generate_expert_dataset,
                       make_env, pd_action, rollout, scripted_expert)


def test_free_integrator_examples():
    env = FreeIntegrator()
    s, r, done = env_step(env, np.zeros(4), np.array([1.0, 0.0]))
    np.testing.assert_allclose(s, [0.01, 0, 0.1, 0], atol=1e-15)
    s, _, _ = env_step(env, np.array([0, 0, 0.5, 0.0]), np.zeros(2))
    np.testing.assert_allclose(s, [0.05, 0, 0.5, 0], atol=1e-15)
    assert (r, done) == (0.0, False)


def test_maze_interior_matches_free_rule():
    env = PointMassMaze()
    s = np.array([1.5, 1.5, 0.2, -0.1])
    a = np.array([0.3, 0.4])
    v = s[2:] + a * DT
    expected = np.concatenate([s[:2] + v * DT, v])
    np.testing.assert_allclose(env.step(s, a)[0], expected, atol=1e-15)


def test_wall_contact_clamps_and_zeroes_velocity():
    env = PointMassMaze()
    # cell (2, 2) is a wall: moving +x from (1.95, 2.5) hits its face at x = 2
    s = np.array([1.95, 2.5, 1.0, 0.3])
    s2, _, _ = env.step(s, np.zeros(2))
    assert s2[0] < 2.0 and s2[0] == np.nextafter(2.0, 0)
    assert s2[2] == 0.0
    assert s2[3] == 0.3
    # moving -x into the outer wall at x = 1
    s3, _, _ = env.step(np.array([1.02, 2.5, -1.0, 0.0]), np.zeros(2))
    assert s3[0] == 1.0 and s3[2] == 0.0
    assert env.cell_of(s3) == (1, 2)


def test_goal_reward_and_done():
    env = PointMassMaze()
    gx, gy = env.goal_cell
    s, r, done = env.step(np.array([gx - 0.01, gy + 0.5, 0.5, 0.0]), np.zeros(2))
    assert env.is_goal(s) and r == 1.0 and done


def test_env_step_rejects_non_finite():
    with pytest.raises(ValueError):
        env_step(FreeIntegrator(), np.zeros(4), np.array([np.nan, 0.0]))


def test_env_step_pure():
    env = PointMassMaze()
    s, a = np.array([1.4, 1.6, 0.3, 0.2]), np.array([0.5, -0.2])
    s_copy = s.copy()
    assert np.array_equal(env.step(s, a)[0], env.step(s, a)[0])
    np.testing.assert_array_equal(s, s_copy)


def test_pd_examples():
    np.testing.assert_array_equal(pd_action(np.zeros(2), np.zeros(2), np.array([1.0, 0]), 2, 1), [1, 0])
    np.testing.assert_array_equal(pd_action(np.ones(2), np.zeros(2), np.ones(2), 2, 1), [0, 0])
    np.testing.assert_array_equal(pd_action(np.zeros(2), np.array([3.0, 0]), np.array([1.0, 0]), 2, 1), [-1, 0])


def test_expert_dataset_small():
    env = PointMassMaze()
    ds = generate_expert_dataset(env, 2, 5, 0)
    assert len(ds) == 2 and all(len(t) <= 5 for t in ds)


def test_expert_dataset_deterministic(tmp_path):
    env = PointMassMaze()
    write_dataset(tmp_path / "a.jsonl", generate_expert_dataset(env, 3, 400, 7))
    write_dataset(tmp_path / "b.jsonl", generate_expert_dataset(env, 3, 400, 7))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_maze_expert_always_reaches_goal():
    env = PointMassMaze()
    ds = generate_expert_dataset(env, 100, 400, 0)
    for t in ds:
        assert env.is_goal(t.states[-1]) and len(t) < 400
    # the expert uses its full unconstrained range
    acts = np.concatenate([t.actions for t in ds])
    assert np.abs(acts).max() == 1.0
    assert not all(is_feasible(a, None, Box(0.1)) for a in acts)


def test_rollout_with_constraint_is_feasible():
    env = PointMassMaze()
    s0 = env.sample_initial_state(np.random.default_rng(0))
    traj, total, done = rollout(env, lambda s: scripted_expert(env, s, ExpertGains()), s0, 300, Box(0.1))
    assert all(is_feasible(a, None, Box(0.1)) for a in traj.actions)
    assert done and total == 1.0


def test_make_env():
    assert isinstance(make_env("maze"), PointMassMaze)
    assert isinstance(make_env("free"), FreeIntegrator)
    with pytest.raises(ValueError):
        make_env("mujoco")
