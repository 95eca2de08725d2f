"""Deterministic point-mass simulators and a scripted waypoint expert.

State is ``(px, py, vx, vy)`` in maze-cell units, action is an acceleration
``(ax, ay)``. One step integrates semi-implicitly::

    v' = v + a * dt
    p' = p + v' * dt
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Trajectory

DT = 0.1

# Maze layout: '#' wall, '.' free, 'S' start cell, 'G' goal cell. Row 0 is the
# top line of the string but maps to y = 0 (y grows downward in the picture).
DEFAULT_MAZE = (
    "#######",
    "#S..#.#",
    "#.#.#.#",
    "#.#...#",
    "#.###.#",
    "#....G#",
    "#######",
)


@dataclass(frozen=True)
class Environment:
    """Common surface of the built-in simulators."""

    name: str = "env"
    d_s: int = 4
    d_a: int = 2
    dt: float = DT
    max_steps: int = 400
    velocity_indices: tuple[int, ...] = (2, 3)
    action_limit: float = 1.0

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, s, a):
        raise NotImplementedError

    def waypoint(self, s) -> np.ndarray:
        raise NotImplementedError

    def is_goal(self, s) -> bool:
        return False


@dataclass(frozen=True)
class FreeIntegrator(Environment):
    """Wall-free double integrator; the expert steers toward ``target``."""

    name: str = "free"
    target: tuple[float, float] = (0.0, 0.0)
    init_pos_range: float = 1.0
    init_vel_range: float = 0.5

    def sample_initial_state(self, rng):
        p = rng.uniform(-self.init_pos_range, self.init_pos_range, size=2)
        v = rng.uniform(-self.init_vel_range, self.init_vel_range, size=2)
        return np.concatenate([p, v])

    def step(self, s, a):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        v = s[2:] + a * self.dt
        p = s[:2] + v * self.dt
        return np.concatenate([p, v]), 0.0, False

    def waypoint(self, s):
        return np.asarray(self.target, dtype=float)


@dataclass(frozen=True)
class PointMassMaze(Environment):
    """Point mass in a grid maze with sliding wall contacts.

    A move that would enter a wall cell (or leave the grid) along one axis is
    cut at the wall face and that velocity component is zeroed. Axes are
    resolved x first, then y. Reward is 1 on the step that enters the goal
    cell, which also ends the episode.
    """

    name: str = "maze"
    layout: tuple[str, ...] = DEFAULT_MAZE
    start_jitter: float = 0.3
    _walls: np.ndarray = field(init=False, repr=False, compare=False)
    _next_cell: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        grid = np.array([[ch == "#" for ch in row] for row in self.layout], dtype=bool)
        object.__setattr__(self, "_walls", grid.T.copy())  # index as [x, y]
        object.__setattr__(self, "_next_cell", self._bfs())

    @property
    def width(self) -> int:
        return self._walls.shape[0]

    @property
    def height(self) -> int:
        return self._walls.shape[1]

    def _find(self, ch):
        for y, row in enumerate(self.layout):
            for x, c in enumerate(row):
                if c == ch:
                    return (x, y)
        raise ValueError(f"layout has no {ch!r} cell")

    @property
    def start_cell(self):
        return self._find("S")

    @property
    def goal_cell(self):
        return self._find("G")

    def blocked(self, cx: int, cy: int) -> bool:
        if cx < 0 or cy < 0 or cx >= self.width or cy >= self.height:
            return True
        return bool(self._walls[cx, cy])

    def _bfs(self):
        goal = self.goal_cell
        nxt = {goal: goal}
        queue = deque([goal])
        while queue:
            c = queue.popleft()
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                n = (c[0] + dx, c[1] + dy)
                if n not in nxt and not self.blocked(*n):
                    nxt[n] = c
                    queue.append(n)
        return nxt

    def cell_of(self, s):
        return (int(np.floor(s[0])), int(np.floor(s[1])))

    def is_goal(self, s) -> bool:
        return self.cell_of(s) == self.goal_cell

    def sample_initial_state(self, rng):
        cx, cy = self.start_cell
        p = np.array([cx + 0.5, cy + 0.5]) + rng.uniform(-self.start_jitter, self.start_jitter, size=2)
        return np.concatenate([p, np.zeros(2)])

    def _move_axis(self, p, v, axis):
        new = p[axis] + v[axis] * self.dt
        other = int(np.floor(p[1 - axis]))
        cell = int(np.floor(new))
        coords = [0, 0]
        coords[axis], coords[1 - axis] = cell, other
        if cell != int(np.floor(p[axis])) and self.blocked(*coords):
            if new > p[axis]:
                new = np.nextafter(float(cell), -np.inf)
            else:
                new = float(cell + 1)
            v[axis] = 0.0
        p[axis] = new

    def step(self, s, a):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        v = s[2:] + a * self.dt
        p = s[:2].copy()
        self._move_axis(p, v, 0)
        self._move_axis(p, v, 1)
        s_next = np.concatenate([p, v])
        done = self.is_goal(s_next)
        return s_next, (1.0 if done else 0.0), done

    def waypoint(self, s):
        c = self.cell_of(s)
        nxt = self._next_cell.get(c, c)
        return np.array([nxt[0] + 0.5, nxt[1] + 0.5])


ENVIRONMENTS = {"maze": PointMassMaze, "free": FreeIntegrator}


def make_env(name: str, **kwargs) -> Environment:
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}") from None


def env_step(env: Environment, s, a):
    """Advance the simulator one step; returns ``(s_next, reward, done)``."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("action must be finite")
    return env.step(s, a)


@dataclass(frozen=True)
class ExpertGains:
    kp: float = 2.0
    kd: float = 1.0
    limit: float = 1.0


def pd_action(p, v, w, kp, kd, limit=1.0):
    """``clip(kp * (w - p) - kd * v, -limit, limit)``."""
    p, v, w = (np.asarray(x, dtype=float) for x in (p, v, w))
    return np.clip(kp * (w - p) - kd * v, -limit, limit)


def scripted_expert(env: Environment, s, gains: ExpertGains = ExpertGains()):
    s = np.asarray(s, dtype=float)
    return pd_action(s[:2], s[2:], env.waypoint(s), gains.kp, gains.kd, gains.limit)


def rollout(env, policy, s0, max_steps, constraint=None):
    """Run ``policy(s)`` from ``s0``; optionally project every action.

    Returns ``(trajectory, total_reward, reached_goal)``.
    """
    from .constraints import project

    states = [np.asarray(s0, dtype=float)]
    actions = []
    total, done = 0.0, False
    s = states[0]
    for _ in range(max_steps):
        a = np.asarray(policy(s), dtype=float)
        if constraint is not None:
            a = project(a, s, constraint)
        s, r, done = env_step(env, s, a)
        actions.append(a)
        states.append(s)
        total += r
        if done:
            break
    return Trajectory(np.array(states), np.array(actions).reshape(-1, env.d_a)), total, done


def generate_expert_dataset(env, n, max_steps, seed, gains=ExpertGains()) -> Dataset:
    """Roll out the unconstrained scripted expert from ``n`` sampled starts."""
    if n < 1:
        raise ValueError("need at least one trajectory")
    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(n):
        s0 = env.sample_initial_state(rng)
        traj, _, _ = rollout(env, lambda s: scripted_expert(env, s, gains), s0, max_steps)
        trajs.append(traj)
    return Dataset(trajs, {"env": env.name, "d_s": env.d_s, "d_a": env.d_a, "seed": int(seed), "constraint": "none"})
