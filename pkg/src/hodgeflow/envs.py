"""Desk-scale episodic environments and observation/action wrappers.

Every environment is a deterministic function of the seed passed to
``reset`` and the action sequence. ``step`` returns
``(observation, reward, done, truncated)``; ``truncated`` marks a horizon cut,
through which learners keep bootstrapping.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .mdp import FiniteMdp, uniform_distribution


class EpisodicEnv:
    """Minimal episodic interface shared by every environment and wrapper."""

    n_actions: int
    n_states: int | None = None  # set for tabular environments

    def reset(self, seed=None):
        raise NotImplementedError

    def step(self, action):
        raise NotImplementedError

    def _check_action(self, action):
        if not (0 <= int(action) < self.n_actions):
            raise ContractError(f"action {action} outside [0, {self.n_actions})")
        return int(action)


class TabularEnv(EpisodicEnv):
    """Episodic simulator of a ``FiniteMdp`` with a fixed horizon.

    Observations are integer state ids. With ``discount_restarts`` each step is
    also truncated with probability ``1 - gamma``, so visited triplets follow
    the discounted occupancy rather than the stationary distribution.
    """

    def __init__(self, mdp: FiniteMdp, horizon: int, d0=None, terminal_states=(), discount_restarts=False):
        self.mdp = mdp
        self.discount_restarts = discount_restarts
        self.horizon = int(horizon)
        self.d0 = uniform_distribution(mdp.n_states) if d0 is None else np.asarray(d0, dtype=float)
        self.terminal_states = frozenset(int(s) for s in terminal_states)
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions
        self.rng = np.random.default_rng()
        self.state = None
        self.t = 0
        self._finished = True

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = int(self.rng.choice(self.n_states, p=self.d0))
        self.t = 0
        self._finished = False
        return self.state

    def step(self, action):
        if self._finished:
            raise ContractError("step() called on a finished episode; call reset()")
        a = self._check_action(action)
        s = self.state
        s2 = int(self.rng.choice(self.n_states, p=self.mdp.transition[s, a]))
        r = float(self.mdp.reward[s, a, s2])
        self.state = s2
        self.t += 1
        done = s2 in self.terminal_states
        truncated = not done and self.t >= self.horizon
        if self.discount_restarts and not done and self.rng.random() >= self.mdp.discount:
            truncated = True
        self._finished = done or truncated
        return s2, r, done, truncated


@dataclass
class RingSpec:
    n: int = 10
    horizon: int = 50
    gamma: float = 0.99
    mode: str = "integrable"
    epsilon: float = 0.1
    potential_seed: int = 0
    zero_potential: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ContractError("ring needs at least 3 states")
        if self.mode not in ("integrable", "nonintegrable"):
            raise ContractError(f"unknown ring mode {self.mode!r}")


CLOCKWISE, COUNTERCLOCKWISE = 0, 1


def make_ring(spec: RingSpec):
    """Ring of ``n`` states with deterministic clockwise/counterclockwise moves.

    Rewards are ``u*(s') - gamma u*(s)`` for a potential drawn uniformly from
    [-1, 1]; in non-integrable mode the clockwise edge leaving state 0 gets an
    extra ``epsilon``. Returns ``(env, mdp, u_star)``.
    """
    n, gamma = spec.n, spec.gamma
    rng = np.random.default_rng(spec.potential_seed)
    u_star = np.zeros(n) if spec.zero_potential else rng.uniform(-1.0, 1.0, size=n)
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2, n))
    for s in range(n):
        for a, step in ((CLOCKWISE, 1), (COUNTERCLOCKWISE, -1)):
            s2 = (s + step) % n
            P[s, a, s2] = 1.0
            R[s, a, s2] = u_star[s2] - gamma * u_star[s]
    if spec.mode == "nonintegrable":
        R[0, CLOCKWISE, 1 % n] += spec.epsilon
    mdp = FiniteMdp(P, R, gamma)
    return TabularEnv(mdp, spec.horizon), mdp, u_star


@dataclass
class RandomFeatureSpec:
    n_states: int = 50
    n_actions: int = 2
    feature_dim: int = 32
    seed: int = 0
    gamma: float = 0.99
    horizon: int = 1000


def make_random_feature_mdp(spec: RandomFeatureSpec):
    """Random dense MDP plus a fixed random feature matrix.

    Transition rows are Dirichlet(1), rewards ``r(s, a)`` uniform on [-1, 1],
    features standard normal with unit-norm columns. Returns ``(mdp, features)``.
    """
    rng = np.random.default_rng(spec.seed)
    n, A = spec.n_states, spec.n_actions
    P = rng.dirichlet(np.ones(n), size=(n, A))
    r = rng.uniform(-1.0, 1.0, size=(n, A))
    phi = rng.standard_normal((n, spec.feature_dim))
    phi /= np.linalg.norm(phi, axis=0, keepdims=True)
    return FiniteMdp(P, r, spec.gamma), phi


MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


class PointMass(EpisodicEnv):
    """Grid point mass: four moves, walls block, the goal cell absorbs.

    Each move costs ``step_penalty`` (wall bumps included). Observations are
    cell ids ``row * grid_size + col``.
    """

    def __init__(self, grid_size: int = 5, goal=None, step_penalty: float = 1.0, start=None):
        if grid_size < 3:
            raise ContractError("grid_size must be at least 3")
        self.grid_size = grid_size
        self.goal = tuple(goal) if goal is not None else (grid_size - 1, grid_size - 1)
        self.step_penalty = float(step_penalty)
        self.start = None if start is None else tuple(start)
        self.max_steps = 4 * grid_size * grid_size
        self.n_states = grid_size * grid_size
        self.n_actions = 4
        self.rng = np.random.default_rng()
        self.pos = None
        self.t = 0
        self._finished = True

    def cell(self, pos) -> int:
        return pos[0] * self.grid_size + pos[1]

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if self.start is not None:
            self.pos = self.start
        else:
            goal_id = self.cell(self.goal)
            choice = int(self.rng.integers(self.n_states - 1))
            choice += choice >= goal_id
            self.pos = divmod(choice, self.grid_size)
        self.t = 0
        self._finished = False
        return self.cell(self.pos)

    def step(self, action):
        if self._finished:
            raise ContractError("step() called on a finished episode; call reset()")
        a = self._check_action(action)
        if self.pos == self.goal:
            self._finished = True
            return self.cell(self.pos), 0.0, True, False
        dr, dc = MOVES[a]
        row, col = self.pos[0] + dr, self.pos[1] + dc
        if 0 <= row < self.grid_size and 0 <= col < self.grid_size:
            self.pos = (row, col)
        self.t += 1
        done = self.pos == self.goal
        truncated = not done and self.t >= self.max_steps
        self._finished = done or truncated
        return self.cell(self.pos), -self.step_penalty, done, truncated


def make_pointmass(grid_size: int = 5, goal=None, step_penalty: float = 1.0, start=None) -> PointMass:
    return PointMass(grid_size, goal, step_penalty, start)


class Wrapper(EpisodicEnv):
    def __init__(self, env: EpisodicEnv):
        self.env = env
        self.n_actions = env.n_actions
        self.n_states = env.n_states

    @property
    def unwrapped(self):
        return getattr(self.env, "unwrapped", self.env)

    def reset(self, seed=None):
        return self.env.reset(seed)

    def step(self, action):
        return self.env.step(action)


@dataclass
class HoldLastSpec:
    hold_index: int | None = None  # defaults to the wrapped env's n_actions
    default_action: int = 0
    max_hold_steps: int | None = None


class HoldLastAction(Wrapper):
    """Adds a hold action that replays a hidden actuator memory.

    Holding executes the remembered action; any other action executes and
    overwrites the memory. After ``max_hold_steps`` consecutive holds the
    memory falls back to ``default_action``. The memory never appears in the
    observation.
    """

    def __init__(self, env: EpisodicEnv, spec: HoldLastSpec | None = None):
        super().__init__(env)
        spec = spec or HoldLastSpec()
        self.hold_index = env.n_actions if spec.hold_index is None else spec.hold_index
        if self.hold_index != env.n_actions:
            raise ContractError("hold action must be the new last index")
        self.default_action = spec.default_action
        self.max_hold_steps = spec.max_hold_steps
        self.n_actions = env.n_actions + 1
        self._memory = self.default_action
        self._holds = 0
        self.executed_action = None

    def reset(self, seed=None):
        self._memory = self.default_action
        self._holds = 0
        self.executed_action = None
        return self.env.reset(seed)

    def step(self, action):
        a = self._check_action(action)
        if a == self.hold_index:
            self._holds += 1
            if self.max_hold_steps is not None and self._holds > self.max_hold_steps:
                self._memory = self.default_action
                self._holds = 0
            executed = self._memory
        else:
            executed = a
            self._memory = a
            self._holds = 0
        self.executed_action = executed
        return self.env.step(executed)


def wrap_hold_last(env: EpisodicEnv, spec: HoldLastSpec | None = None) -> HoldLastAction:
    return HoldLastAction(env, spec)


@dataclass
class NoiseSpec:
    p_alias: float = 0.1
    rng_seed: int = 0


@dataclass
class StickySpec:
    reuse_prob: float = 0.25
    rng_seed: int = 0


class ObservationReuse(Wrapper):
    """With probability ``prob`` emit the previous emitted observation.

    Rewards and dynamics are untouched. The first observation of an episode
    is never replaced. ``n_steps`` and ``n_reused`` count decisions since
    construction.
    """

    def __init__(self, env: EpisodicEnv, prob: float, rng_seed: int = 0, stream: int = 0):
        super().__init__(env)
        if not 0.0 <= prob <= 1.0:
            raise ContractError(f"probability must lie in [0, 1], got {prob}")
        self.prob = float(prob)
        self.rng_seed = rng_seed
        self._stream = stream
        self.rng = np.random.default_rng([rng_seed, stream])
        self._last = None
        self.n_steps = 0
        self.n_reused = 0

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng([self.rng_seed, self._stream, seed])
        self._last = self.env.reset(seed)
        return self._last

    def step(self, action):
        obs, r, done, truncated = self.env.step(action)
        self.n_steps += 1
        if self.rng.random() < self.prob:
            self.n_reused += 1
            obs = self._last
        self._last = obs
        return obs, r, done, truncated


def wrap_noisy(env: EpisodicEnv, spec: NoiseSpec | None = None) -> ObservationReuse:
    spec = spec or NoiseSpec()
    return ObservationReuse(env, spec.p_alias, spec.rng_seed, stream=1)


def wrap_sticky(env: EpisodicEnv, spec: StickySpec | None = None) -> ObservationReuse:
    spec = spec or StickySpec()
    return ObservationReuse(env, spec.reuse_prob, spec.rng_seed, stream=2)


def dump_trajectory(rows, path) -> None:
    """Write ``(t, s, a, r, s', done, truncated)`` rows as tab-separated text."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["t", "s", "a", "r", "s_next", "done", "truncated"])
        for row in rows:
            t, s, a, r, s2, done, trunc = row
            writer.writerow([t, s, a, repr(float(r)), s2, int(done), int(trunc)])


def rollout(env: EpisodicEnv, actions, seed=None) -> list:
    """Play a fixed action script; stops early at episode end."""
    obs = env.reset(seed)
    rows = []
    for t, a in enumerate(actions):
        obs2, r, done, trunc = env.step(a)
        rows.append((t, obs, a, r, obs2, done, trunc))
        obs = obs2
        if done or trunc:
            break
    return rows
