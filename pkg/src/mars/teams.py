"""Uncontrolled-team generation and episode composition sampling.

Five convention families are lightweight independent Q-learning self-play
recipes over a discretized local view. They differ in exploration
schedule, discount, learning rate, shaping strength, view radius,
tie-break order, and table initialization — enough to yield mutually
incompatible conventions across families and seeds. Policies are frozen
tables after pretraining.
"""
from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import dataclass

import numpy as np

from .envs import N_ACTIONS, EnvConfig, PredatorPreyEnv
from .errors import ConfigError, UsageError

FAMILIES = {
    "greedy_chaser": dict(eps_start=1.0, eps_end=0.02, gamma=0.95, lr=0.25,
                          shaping=0.05, radius=3, tie_order=(0, 1, 2, 3, 4),
                          q_init=0.01, episodes=2500),
    "cautious_explorer": dict(eps_start=0.8, eps_end=0.15, gamma=0.90, lr=0.10,
                              shaping=0.02, radius=2, tie_order=(4, 3, 2, 1, 0),
                              q_init=0.05, episodes=2500),
    "patient_planner": dict(eps_start=1.0, eps_end=0.05, gamma=0.99, lr=0.15,
                            shaping=0.0, radius=3, tie_order=(2, 0, 3, 1, 4),
                            q_init=0.02, episodes=3000),
    "myopic_rusher": dict(eps_start=0.6, eps_end=0.01, gamma=0.80, lr=0.40,
                          shaping=0.10, radius=2, tie_order=(1, 3, 0, 2, 4),
                          q_init=0.0, episodes=2000),
    "wide_scanner": dict(eps_start=0.9, eps_end=0.10, gamma=0.95, lr=0.20,
                         shaping=0.04, radius=3, tie_order=(3, 2, 1, 0, 4),
                         q_init=0.1, episodes=2500),
}


def _stream(*parts):
    key = tuple(zlib.crc32(str(p).encode()) if isinstance(p, str) else int(p)
                for p in parts)
    return np.random.default_rng(np.random.SeedSequence(key))


def obs_key(obs, grid_size, radius):
    """Discretize an observation into (own_r, own_c, prey_dr, prey_dc)."""
    s = grid_size - 1
    own_r = int(round(obs[0] * s))
    own_c = int(round(obs[1] * s))
    dr = int(round(obs[2] * s))
    dc = int(round(obs[3] * s))
    dr = -radius if dr < -radius else (radius if dr > radius else dr)
    dc = -radius if dc < -radius else (radius if dc > radius else dc)
    return own_r, own_c, dr + radius, dc + radius


@dataclass
class TeamPolicy:
    family_id: str
    seed: int
    size: int
    grid_size: int
    radius: int
    tie_order: tuple
    q: np.ndarray  # (g, g, 2R+1, 2R+1, n_actions)
    _greedy_table: np.ndarray = None  # lazy cache; the table is frozen

    def _greedy(self):
        if self._greedy_table is None:
            ties = self.q == self.q.max(axis=-1, keepdims=True)
            rank = np.empty(N_ACTIONS, dtype=np.int64)
            rank[list(self.tie_order)] = np.arange(N_ACTIONS)
            keyed = np.where(ties, rank, N_ACTIONS)
            self._greedy_table = np.asarray(self.tie_order, dtype=np.int64)[
                keyed.argmin(axis=-1)]
        return self._greedy_table

    def greedy_action(self, obs):
        return int(self._greedy()[obs_key(obs, self.grid_size, self.radius)])

    def soft_action(self, obs, rng, temperature=0.5):
        qv = self.q[obs_key(obs, self.grid_size, self.radius)]
        z = (qv - qv.max()) / max(temperature, 1e-6)
        p = np.exp(z)
        p /= p.sum()
        return int(rng.choice(N_ACTIONS, p=p))

    def checksum(self):
        h = hashlib.sha256()
        h.update(f"{self.family_id}|{self.seed}|{self.size}|{self.grid_size}|"
                 f"{self.radius}|{self.tie_order}".encode())
        h.update(self.q.tobytes())
        return h.hexdigest()


def pretrain_team(family_id, size, seed, env_config: EnvConfig, episodes=None) -> TeamPolicy:
    """Self-play a frozen joint policy for one family; deterministic per seed."""
    if family_id not in FAMILIES:
        raise ConfigError(f"unknown convention family: {family_id}")
    if size < 1:
        raise ConfigError("team size must be >= 1")
    spec = FAMILIES[family_id]
    cfg = EnvConfig(grid_size=env_config.grid_size, n_agents=size,
                    episode_limit=env_config.episode_limit,
                    reward_capture=env_config.reward_capture,
                    step_cost=env_config.step_cost)
    env = PredatorPreyEnv(cfg)
    rng = _stream("pretrain", family_id, seed, size)
    g, radius = cfg.grid_size, spec["radius"]
    side = 2 * radius + 1
    q = rng.uniform(-spec["q_init"], spec["q_init"],
                    size=(g, g, side, side, N_ACTIONS)) if spec["q_init"] > 0 else \
        np.zeros((g, g, side, side, N_ACTIONS))
    n_eps = episodes if episodes is not None else spec["episodes"]
    for ep in range(n_eps):
        eps = spec["eps_start"] + (spec["eps_end"] - spec["eps_start"]) * ep / max(n_eps - 1, 1)
        obs = env.reset(int(rng.integers(0, 2 ** 31)))
        keys = [obs_key(o, g, radius) for o in obs]
        dists = [abs(o[2]) + abs(o[3]) for o in obs]
        while not env.done:
            acts = []
            for i in range(size):
                if rng.random() < eps:
                    acts.append(int(rng.integers(0, N_ACTIONS)))
                else:
                    qv = q[keys[i]]
                    acts.append(int(np.argmax(qv)))
            res = env.step(acts)
            new_keys = [obs_key(o, g, radius) for o in res.observations]
            new_dists = [abs(o[2]) + abs(o[3]) for o in res.observations]
            for i in range(size):
                r = res.reward + spec["shaping"] * (dists[i] - new_dists[i]) * (g - 1)
                boot = 0.0 if res.done else spec["gamma"] * q[new_keys[i]].max()
                td = r + boot - q[keys[i]][acts[i]]
                q[keys[i]][acts[i]] += spec["lr"] * td
            keys, dists = new_keys, new_dists
    return TeamPolicy(family_id=family_id, seed=seed, size=size, grid_size=g,
                      radius=radius, tie_order=tuple(spec["tie_order"]), q=q)


def act_uncontrolled(policy: TeamPolicy, observations, mode="greedy", rng=None,
                     temperature=0.5):
    """Joint action for one uncontrolled group from its members' observations."""
    if len(observations) == 0:
        raise UsageError("no member observations")
    if mode == "greedy":
        return [policy.greedy_action(o) for o in observations]
    if mode == "soft":
        if rng is None:
            raise UsageError("soft mode needs an rng")
        return [policy.soft_action(o, rng, temperature) for o in observations]
    raise ConfigError(f"unknown acting mode: {mode}")


@dataclass
class TeamComposition:
    n_total: int
    controlled_ids: list
    groups: list  # [(TeamPolicy, [agent ids]), ...]

    @property
    def n_controlled(self):
        return len(self.controlled_ids)

    def group_of(self):
        """Partition map for the skeleton builder; controlled set is group 0."""
        out = {i: 0 for i in self.controlled_ids}
        for gi, (_, ids) in enumerate(self.groups, start=1):
            for i in ids:
                out[i] = gi
        return out

    def validate(self):
        ids = list(self.controlled_ids)
        for _, member_ids in self.groups:
            if not member_ids:
                raise ConfigError("empty uncontrolled group")
            ids.extend(member_ids)
        if sorted(ids) != list(range(self.n_total)):
            raise ConfigError("composition does not partition the agent set")
        if self.n_controlled < 1:
            raise ConfigError("need at least one controlled agent")


def _size_tuples(budget, m):
    """Ordered group-size tuples (s_1..s_m), each >= 1, sum <= budget."""
    out = []

    def rec(prefix, slots):
        if slots == 0:
            out.append(tuple(prefix))
            return
        used = sum(prefix)
        for s in range(1, budget - used - (slots - 1) + 1):
            rec(prefix + [s], slots - 1)

    rec([], m)
    return out


def sample_composition(pool, n_total, m_groups, rng) -> TeamComposition:
    """Draw an episode composition: policies uniform without replacement,
    group sizes uniform over ordered tuples with each group >= 1 and at
    least one agent left controlled."""
    if m_groups == 0:
        return TeamComposition(n_total=n_total,
                               controlled_ids=list(range(n_total)), groups=[])
    if len(pool) < m_groups:
        raise ConfigError("pool smaller than the number of groups")
    if n_total < m_groups + 1:
        raise ConfigError("need n_total >= m_groups + 1")
    picked = rng.choice(len(pool), size=m_groups, replace=False)
    tuples = _size_tuples(n_total - 1, m_groups)
    sizes = tuples[int(rng.integers(0, len(tuples)))]
    n_controlled = n_total - sum(sizes)
    controlled = list(range(n_controlled))
    groups = []
    nxt = n_controlled
    for k, s in zip(picked, sizes):
        groups.append((pool[int(k)], list(range(nxt, nxt + s))))
        nxt += s
    comp = TeamComposition(n_total=n_total, controlled_ids=controlled, groups=groups)
    comp.validate()
    return comp


def save_pool(path, policies):
    os.makedirs(path, exist_ok=True)
    manifest = []
    for tp in policies:
        fname = f"{tp.family_id}_s{tp.seed}_n{tp.size}.npz"
        np.savez(os.path.join(path, fname), q=tp.q)
        manifest.append(dict(family_id=tp.family_id, seed=tp.seed, size=tp.size,
                             grid_size=tp.grid_size, radius=tp.radius,
                             tie_order=list(tp.tie_order), file=fname,
                             checksum=tp.checksum()))
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_pool(path):
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    policies = []
    for entry in manifest:
        q = np.load(os.path.join(path, entry["file"]))["q"]
        tp = TeamPolicy(family_id=entry["family_id"], seed=entry["seed"],
                        size=entry["size"], grid_size=entry["grid_size"],
                        radius=entry["radius"], tie_order=tuple(entry["tie_order"]),
                        q=q)
        if tp.checksum() != entry["checksum"]:
            raise ConfigError(f"pool checksum mismatch for {entry['file']}")
        policies.append(tp)
    return policies


def pool_checksum(policies):
    h = hashlib.sha256()
    for tp in policies:
        h.update(tp.checksum().encode())
    return h.hexdigest()
