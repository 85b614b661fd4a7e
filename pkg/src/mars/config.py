"""Experiment configuration: defaults, validation, overrides, hashing.

Configs are plain nested dicts serialized as JSON with a schema_version
field. Unknown keys are rejected up front; the fully resolved config
(defaults applied) is what gets echoed next to run outputs, and its hash
is stamped into checkpoints.
"""
from __future__ import annotations

import copy
import hashlib
import json

from .errors import ConfigError

VARIANTS = ("MARS", "MARS_NO_SKELETON", "POAM_LIKE", "IPPO_MAHT", "NAIVE_MARL")

DEFAULTS = {
    "schema_version": 1,
    "seed": 1,
    "out_dir": "runs/default",
    "variant": "MARS",
    "env": {
        "kind": "predator_prey",
        "grid_size": 7,
        "n_agents": 6,
        "episode_limit": 50,
        "prey_policy_seed": 0,
        "reward_capture": 1.0,
        "step_cost": -0.01,
    },
    "teams": {
        "pool_dir": "",
        "m_groups": 2,
        "acting_mode": "greedy",
        "families": ["greedy_chaser", "cautious_explorer", "patient_planner",
                     "myopic_rusher", "wide_scanner"],
        "pool_seeds": [101, 102],
        "pool_size": 2,
        "pretrain_episodes": None,
    },
    "model": {
        "d_embed": 16,
        "enc_hidden": 24,
        "dec_hidden": 32,
        "rfm_dim": 16,
        "rfm_global_dim": 16,
        "rfm_hidden": 32,
        "rfm_rounds": 2,
        "ac_hidden": 32,
        "representatives": 1,
        "ed_target_mode": "own",
    },
    "ppo": {
        "clip_eps": 0.2,
        "epochs": 4,
        "minibatches": 4,
        "gamma": 0.99,
        "lam": 0.95,
        "ent_coef": 0.01,
        "vf_coef": 0.5,
        "ed_coef": 1.0,
        "lr": 3e-4,
        "max_grad_norm": 0.5,
    },
    "train": {
        "total_steps": 200_000,
        "rollout_episodes": 8,
        "eval_interval": 20_000,
        "eval_episodes": 10,
        "checkpoint_interval": 100_000,
    },
}


def variant_flags(variant):
    """Feature lattice: which stages each algorithm variant enables."""
    if variant == "MARS":
        return {"use_ed": True, "use_rfm": True, "sparse_skeleton": True, "learn": True}
    if variant == "MARS_NO_SKELETON":
        return {"use_ed": True, "use_rfm": True, "sparse_skeleton": False, "learn": True}
    if variant == "POAM_LIKE":
        return {"use_ed": True, "use_rfm": False, "sparse_skeleton": False, "learn": True}
    if variant == "IPPO_MAHT":
        return {"use_ed": False, "use_rfm": False, "sparse_skeleton": False, "learn": True}
    if variant == "NAIVE_MARL":
        return {"use_ed": False, "use_rfm": False, "sparse_skeleton": False, "learn": False}
    raise ConfigError(f"unknown variant: {variant}")


def _check_keys(cfg, template, prefix=""):
    for key in cfg:
        if key not in template:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(template[key], dict):
            if not isinstance(cfg[key], dict):
                raise ConfigError(f"config key {prefix}{key} must be a section")
            _check_keys(cfg[key], template[key], prefix=f"{prefix}{key}.")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(partial):
    """Apply defaults, then validate keys and cross-field rules."""
    _check_keys(partial, DEFAULTS)
    cfg = _merge(DEFAULTS, partial)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg["schema_version"] != 1:
        raise ConfigError("unsupported schema_version")
    if cfg["variant"] not in VARIANTS:
        raise ConfigError(f"unknown variant: {cfg['variant']}")
    variant_flags(cfg["variant"])
    env = cfg["env"]
    if env["kind"] not in ("predator_prey", "gridworld"):
        raise ConfigError(f"unknown env kind: {env['kind']}")
    if env["n_agents"] > env["grid_size"] ** 2 - 1:
        raise ConfigError("too many agents for the grid")
    teams = cfg["teams"]
    if teams["m_groups"] < 0:
        raise ConfigError("m_groups must be >= 0")
    if teams["m_groups"] > 0 and env["n_agents"] < teams["m_groups"] + 1:
        raise ConfigError("need n_agents >= m_groups + 1")
    if teams["acting_mode"] not in ("greedy", "soft"):
        raise ConfigError("acting_mode must be greedy or soft")
    ppo = cfg["ppo"]
    if not (0.0 <= ppo["gamma"] <= 1.0 and 0.0 <= ppo["lam"] <= 1.0):
        raise ConfigError("gamma and lam must lie in [0, 1]")
    if cfg["model"]["representatives"] < 1:
        raise ConfigError("representatives must be >= 1")
    if cfg["model"]["ed_target_mode"] not in ("own", "teammate"):
        raise ConfigError("ed_target_mode must be 'own' or 'teammate'")
    if cfg["train"]["rollout_episodes"] < 1:
        raise ConfigError("rollout_episodes must be >= 1")


def apply_overrides(cfg, pairs):
    """Apply repeated key.path=value overrides; values parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key.path=value: {pair}")
        path, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        keys = path.split(".")
        ref = DEFAULTS
        for k in keys[:-1]:
            if not isinstance(ref, dict) or k not in ref:
                raise ConfigError(f"unknown config key: {path}")
            ref = ref[k]
            node = node.setdefault(k, {})
        if not isinstance(ref, dict) or keys[-1] not in ref:
            raise ConfigError(f"unknown config key: {path}")
        node[keys[-1]] = value
    return cfg


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def canonical_json(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def load_file(path):
    with open(path) as f:
        return json.load(f)


def dump_file(cfg, path):
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
