import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acil.constraints import Box, L2Groups, Unconstrained, WeightedAbsSum, is_feasible, project
from acil.envs import FreeIntegrator, PointMassMaze, generate_expert_dataset, rollout, scripted_expert
from acil.planner import (CemConfig, CemDistribution, ErcConfig, OracleModel, cem_update, erc_blend,
                          expert_segment, initial_std, plan_step, sample_feasible_sequence)


def dist(mean, var):
    return CemDistribution(np.array(mean, dtype=float), np.array(var, dtype=float))


def test_cem_update_examples():
    out = cem_update(dist([[0.0]], [[1.0]]), [[2.0]], [[1.0]], 0.5)
    assert out.mean[0, 0] == 1.0
    cur = dist([[0.3, -0.2]], [[0.4, 0.1]])
    same = cem_update(cur, [[5.0, 5.0]], [[9.0, 9.0]], 1.0)
    np.testing.assert_array_equal(same.mean, cur.mean)
    np.testing.assert_array_equal(same.var, cur.var)
    capped = cem_update(dist([[0.5]], [[1.0]]), [[0.5]], [[1.0]], 0.0, bounds=(np.array([-1.0]), np.array([1.0])))
    assert capped.var[0, 0] == 0.25


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0, 4), st.floats(0, 1), st.floats(-1.5, 1.5), st.floats(0, 4))
def test_variance_cap_always_holds(m0, v0, alpha, mt, vt):
    lo, hi = np.array([-1.0]), np.array([1.0])
    out = cem_update(dist([[m0]], [[v0]]), [[mt]], [[vt]], alpha, bounds=(lo, hi))
    w = np.maximum(np.minimum(out.mean - lo, hi - out.mean), 0)
    assert np.all(out.var >= 0)
    assert np.all(out.var <= 0.5 * w + 1e-12)


def test_non_box_cap_is_initial_variance():
    out = cem_update(dist([[0.0]], [[0.25]]), [[0.0]], [[9.0]], 0.0, var_cap=np.array([[0.25]]))
    assert out.var[0, 0] == 0.25
    cfg = CemConfig()
    np.testing.assert_array_equal(initial_std(cfg, Box(0.1), 2), [0.1, 0.1])
    np.testing.assert_array_equal(initial_std(cfg, L2Groups((((0, 1), 0.5),)), 2, action_limit=1.0), [0.5, 0.5])


def test_sampling_box_and_unconstrained():
    rng = np.random.default_rng(0)
    d = dist(np.zeros((10, 2)), np.full((10, 2), 0.01))
    x, fb = sample_feasible_sequence(d, Box(0.1), np.zeros(4), 10, rng, n=50)
    assert x.shape == (50, 10, 2) and np.all(np.abs(x) <= 0.1)
    raw_rng, ref_rng = np.random.default_rng(1), np.random.default_rng(1)
    y, fb = sample_feasible_sequence(d, Unconstrained(), np.zeros(4), 10, raw_rng, n=5)
    np.testing.assert_array_equal(y, 0.1 * ref_rng.standard_normal((5, 10, 2)))
    assert fb == 0


def test_sampling_falls_back_to_projection():
    spec = L2Groups((((0, 1), 1e-6),))
    d = dist(np.full((3, 2), 2.0), np.full((3, 2), 0.01))
    x, fb = sample_feasible_sequence(d, spec, np.zeros(4), 3, np.random.default_rng(0), n=4)
    assert fb == 12
    assert np.all(is_feasible(x, None, spec))


def test_sampling_state_dependent_first_step():
    spec = WeightedAbsSum((2, 3), 0.05)
    s = np.array([0, 0, 1.0, 1.0])
    d = dist(np.zeros((4, 2)), np.full((4, 2), 0.25))
    x, _ = sample_feasible_sequence(d, spec, s, 5, np.random.default_rng(0), n=20)
    assert np.all(is_feasible(x[:, 0], np.broadcast_to(s, (20, 4)), spec))


def test_erc_formula_and_horizon():
    sampled = np.full((1, 8, 1), 0.5)
    expert = np.full((8, 1), 0.1)
    states = np.zeros((1, 8, 4))
    out = erc_blend(sampled, expert, ErcConfig(0.05, 5), Box(1.0), states)
    assert out[0, 0, 0] == pytest.approx(0.48, abs=1e-15)
    np.testing.assert_allclose(out[0, :6, 0], 0.48)
    np.testing.assert_array_equal(out[0, 6:, 0], 0.5)
    short = erc_blend(sampled, expert[:2], ErcConfig(0.05, 5), Box(1.0), states)
    np.testing.assert_array_equal(short[0, 2:, 0], 0.5)
    # expert action projected onto the feasible set before blending
    proj = erc_blend(sampled, np.full((8, 1), 3.0), ErcConfig(1.0, 10), Box(0.1), states)
    np.testing.assert_array_equal(proj, 0.1)


def test_expert_segment():
    states = np.arange(10.0)[:, None]
    np.testing.assert_array_equal(expert_segment(states, 0, 3), [[0], [1], [2]])
    np.testing.assert_array_equal(expert_segment(states, 0, 3, exclude_final=False), [[0], [1], [2], [3]])
    np.testing.assert_array_equal(expert_segment(states, 7, 5), [[7], [8]])
    np.testing.assert_array_equal(expert_segment(states, 9, 5), [[9]])


@pytest.fixture(scope="module")
def maze_expert():
    return generate_expert_dataset(PointMassMaze(), 1, 400, 0)[0]


def test_population_of_one(maze_expert):
    cem = CemConfig(population=1, elites=1, iterations=1, horizon=4)
    log = []
    res = plan_step(OracleModel(PointMassMaze()), maze_expert.states[0], maze_expert, 0, cem, ErcConfig(0.0, 0),
                    Box(0.1), np.random.default_rng(0), log=log)
    assert res.cost == log[0][1][0]
    np.testing.assert_array_equal(res.action, res.actions[0])


def test_injected_expert_scores_zero():
    env = FreeIntegrator()
    rng = np.random.default_rng(0)
    expert, _, _ = rollout(env, lambda s: scripted_expert(env, s), env.sample_initial_state(rng), 30)
    H = 5
    cem = CemConfig(population=8, elites=2, iterations=2, horizon=H, exclude_final_state=False, init_std=0.5)
    res = plan_step(OracleModel(env), expert.states[0], expert, 0, cem, ErcConfig(0.0, 0), Unconstrained(),
                    np.random.default_rng(1), extra_candidates=expert.actions[None, :H])
    assert res.cost == 0.0
    np.testing.assert_array_equal(res.action, expert.actions[0])
    assert res.advancement == 1


def test_plan_step_feasible_deterministic_and_best(maze_expert):
    env = PointMassMaze()
    cem = CemConfig(population=32, elites=4, iterations=3, horizon=6)
    for spec in (Box(0.1), WeightedAbsSum((2, 3), 0.05)):
        s = maze_expert.states[3] + np.array([0, 0, 0.2, -0.1])
        log = []
        r1 = plan_step(OracleModel(env), s, maze_expert, 3, cem, ErcConfig(), spec, np.random.default_rng(5), log=log)
        r2 = plan_step(OracleModel(env), s, maze_expert, 3, cem, ErcConfig(), spec, np.random.default_rng(5))
        assert is_feasible(r1.action, s, spec)
        assert r1.action.tobytes() == r2.action.tobytes() and r1.cost == r2.cost
        assert r1.cost == min(c.min() for _, c in log)
        assert len(log) == 3 and all(len(c) == 32 for _, c in log)
        assert r1.states.shape == (7, 4)
        assert r1.advancement in (0, 1)


def test_plan_step_rejects_bad_index(maze_expert):
    with pytest.raises(IndexError):
        plan_step(OracleModel(PointMassMaze()), maze_expert.states[0], maze_expert, len(maze_expert.states),
                  CemConfig(), ErcConfig(), Box(0.1), np.random.default_rng(0))


def test_multi_particle_scoring(maze_expert):
    cem = CemConfig(population=10, elites=2, iterations=1, horizon=3, particles=3)
    res = plan_step(OracleModel(PointMassMaze(), n_members=3), maze_expert.states[0], maze_expert, 0, cem,
                    ErcConfig(), Box(0.1), np.random.default_rng(0))
    assert np.isfinite(res.cost)


def test_config_validation():
    with pytest.raises(ValueError):
        CemConfig(population=5, elites=6)
    with pytest.raises(ValueError):
        CemConfig(alpha=1.5)
    with pytest.raises(ValueError):
        CemConfig(horizon=3, steps_per_plan=4)
    with pytest.raises(ValueError):
        ErcConfig(beta=-0.1)
