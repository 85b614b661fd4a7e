"""Discrete grid Dec-POMDP environments.

Two tasks share one movement/observation core:
  * PredatorPreyEnv — n predators chase a scripted prey; capture pays off
    only when at least two predators sit on the prey's cell.
  * GoalGridworldEnv — agents must gather on a static goal cell; used as
    the single-agent sanity task for policy-gradient checks.

Everything is deterministic given (config, seed, action sequence).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError

N_ACTIONS = 5
ACTION_NAMES = ("up", "right", "down", "left", "stay")
# (row, col) deltas, indexed to match ACTION_NAMES
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1), (0, 0))
# prey tie-break order over actions: up, right, down, left, stay
PREY_TIE_ORDER = (0, 1, 2, 3, 4)


@dataclass
class EnvConfig:
    grid_size: int = 7
    n_agents: int = 3
    episode_limit: int = 50
    prey_policy_seed: int = 0
    reward_capture: float = 1.0
    step_cost: float = -0.01

    def validate(self):
        if self.grid_size < 3:
            raise ConfigError("grid_size must be >= 3")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.episode_limit < 1:
            raise ConfigError("episode_limit must be >= 1")
        if self.n_agents > self.grid_size ** 2 - 1:
            raise ConfigError("too many agents for the grid")


@dataclass
class StepResult:
    observations: list
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def obs_dim(n_agents):
    return 2 + 2 + 2 * (n_agents - 1) + 1


class _GridEnv:
    """Shared movement and observation machinery."""

    def __init__(self, config: EnvConfig):
        config.validate()
        self.config = config
        self.n = config.n_agents
        self.g = config.grid_size
        self.T = config.episode_limit
        self.obs_dim = obs_dim(self.n)
        self.n_actions = N_ACTIONS
        self.positions = None   # (n, 2) int
        self.target = None      # (2,) int: prey or goal cell
        self.t = 0
        self.done = True
        self._others_idx = None
        self._deltas = np.array(DELTAS, dtype=np.int64)

    def reset(self, seed):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xE17)))
        cells = rng.choice(self.g * self.g, size=self.n + 1, replace=False)
        self.positions = np.stack(np.divmod(cells[: self.n], self.g), axis=1).astype(np.int64)
        self.target = np.array(divmod(int(cells[self.n]), self.g), dtype=np.int64)
        self.t = 0
        self.done = False
        return self._observations()

    def set_state(self, positions, target, t=0):
        """Place agents and target directly (tests and the return-bound search)."""
        self.positions = np.array(positions, dtype=np.int64).reshape(self.n, 2)
        self.target = np.array(target, dtype=np.int64).reshape(2)
        self.t = int(t)
        self.done = False
        return self._observations()

    def _observations(self):
        scale = 1.0 / max(self.g - 1, 1)
        n = self.n
        pos = self.positions.astype(np.float64)
        out = np.empty((n, self.obs_dim))
        out[:, 0:2] = pos * scale
        out[:, 2:4] = (self.target - pos) * scale
        if n > 1:
            rel = (pos[None, :, :] - pos[:, None, :]) * scale  # (n, n, 2)
            if self._others_idx is None:
                self._others_idx = np.array(
                    [[j for j in range(n) if j != i] for i in range(n)])
            out[:, 4:4 + 2 * (n - 1)] = rel[
                np.arange(n)[:, None], self._others_idx].reshape(n, 2 * (n - 1))
        out[:, -1] = self.t / self.T
        return list(out)

    def _move(self, pos, action):
        dr, dc = DELTAS[action]
        r = min(max(pos[0] + dr, 0), self.g - 1)
        c = min(max(pos[1] + dc, 0), self.g - 1)
        return np.array([r, c], dtype=np.int64)

    def step(self, joint_action):
        if self.done:
            raise UsageError("step() called on a finished episode")
        acts = np.asarray(joint_action, dtype=np.int64)
        if acts.shape != (self.n,):
            raise UsageError("joint action length mismatch")
        if ((acts < 0) | (acts >= N_ACTIONS)).any():
            raise UsageError("action out of range")
        self.positions = np.clip(self.positions + self._deltas[acts], 0, self.g - 1)
        reward, success = self._resolve()
        self.t += 1
        if success or self.t >= self.T:
            self.done = True
        return StepResult(self._observations(), reward, self.done,
                          {"success": success, "t": self.t})

    def _resolve(self):
        raise NotImplementedError


class PredatorPreyEnv(_GridEnv):
    """Predators earn reward_capture when >= 2 of them land on the prey."""

    CAPTURE_MIN = 2

    def _resolve(self):
        on_prey = int((self.positions == self.target).all(axis=1).sum())
        if on_prey >= self.CAPTURE_MIN:
            return self.config.reward_capture, True
        self.target = self._prey_move()
        return self.config.step_cost, False

    def _prey_move(self):
        dists = np.abs(self.positions - self.target).sum(axis=1)
        nr, nc = (int(v) for v in self.positions[int(np.argmin(dists))])
        tr, tc = int(self.target[0]), int(self.target[1])
        best = None
        for rank, a in enumerate(PREY_TIE_ORDER):
            dr, dc = DELTAS[a]
            r, c = tr + dr, tc + dc
            if not (0 <= r < self.g and 0 <= c < self.g):
                continue
            key = (-(abs(r - nr) + abs(c - nc)), rank)
            if best is None or key < best[0]:
                best = (key, (r, c))
        return np.array(best[1], dtype=np.int64)


class GoalGridworldEnv(_GridEnv):
    """All agents must gather on the static goal cell."""

    def _resolve(self):
        on_goal = int((self.positions == self.target).all(axis=1).sum())
        if on_goal == self.n:
            return self.config.reward_capture, True
        return self.config.step_cost, False


def make_env(kind, config):
    if kind == "predator_prey":
        return PredatorPreyEnv(config)
    if kind == "gridworld":
        return GoalGridworldEnv(config)
    raise ConfigError(f"unknown env kind: {kind}")


_BOUND_STATE_CAP = 400_000


def optimal_return_bound(kind, config: EnvConfig, seed):
    """Upper bound on episodic return by exhaustive joint-action search.

    Deterministic dynamics let us memoize on (positions, target, t). Refuses
    instances beyond desk scale.
    """
    if config.grid_size > 5 or config.n_agents > 3:
        raise ConfigError("optimal_return_bound: instance too large (grid_size <= 5, n <= 3)")
    if config.episode_limit <= 0:
        return 0.0
    config.validate()
    env = make_env(kind, config)
    init_obs = env.reset(seed)
    del init_obs
    return optimal_return_bound_from(kind, config, env.positions, env.target)


def optimal_return_bound_from(kind, config: EnvConfig, positions, target):
    """Same search from an explicit initial placement."""
    if config.grid_size > 5 or config.n_agents > 3:
        raise ConfigError("optimal_return_bound: instance too large (grid_size <= 5, n <= 3)")
    if config.episode_limit <= 0:
        return 0.0
    env = make_env(kind, config)
    memo = {}
    joint_actions = _all_joint_actions(config.n_agents)

    def search(positions, target, t):
        if t >= config.episode_limit:
            return 0.0
        key = (positions.tobytes(), target.tobytes(), t)
        if key in memo:
            return memo[key]
        if len(memo) > _BOUND_STATE_CAP:
            raise ConfigError("optimal_return_bound: search space too large")
        best = -np.inf
        for ja in joint_actions:
            env.set_state(positions, target, t)
            res = env.step(ja)
            total = res.reward
            if not res.done:
                total += search(env.positions.copy(), env.target.copy(), env.t)
            best = max(best, total)
        memo[key] = best
        return best

    pos = np.array(positions, dtype=np.int64).reshape(config.n_agents, 2)
    tgt = np.array(target, dtype=np.int64).reshape(2)
    return float(search(pos, tgt, 0))


def _all_joint_actions(n):
    if n == 1:
        return [(a,) for a in range(N_ACTIONS)]
    out = []
    for a in range(N_ACTIONS):
        for rest in _all_joint_actions(n - 1):
            out.append((a,) + rest)
    return out
