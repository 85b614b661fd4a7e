"""Command-line entry point.

Verbs: pretrain-pool, train, eval, sweep, grad-check, validate-config.
Configs are JSON; repeated --set key.path=value overrides apply on top of
the file, and the fully resolved config is echoed into the output
directory so any run can be reproduced from its artifacts alone.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import agent_model, policy, rfm  # noqa: F401  (gradcheck registrations)
from . import config as cfg_mod
from . import trainer
from .envs import EnvConfig
from .errors import ConfigError, UsageError
from .gradcheck import REGISTRY, check_gradients
from .teams import pretrain_team, save_pool


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config(args):
    partial = cfg_mod.load_file(args.config) if args.config else {}
    if getattr(args, "seed", None) is not None:
        partial["seed"] = args.seed
    partial = cfg_mod.apply_overrides(partial, args.set or [])
    cfg = cfg_mod.resolve(partial)
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    return cfg


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cfg_mod.dump_file(cfg, os.path.join(out_dir, "resolved_config.json"))


def cmd_pretrain_pool(args):
    cfg = _load_config(args)
    pool_dir = cfg["teams"]["pool_dir"] or os.path.join(cfg["out_dir"], "pool")
    cfg["teams"]["pool_dir"] = pool_dir
    _echo_config(cfg, pool_dir)
    env_cfg = trainer.env_config_from(cfg)
    policies = []
    for family in cfg["teams"]["families"]:
        for seed in cfg["teams"]["pool_seeds"]:
            _log(f"pretraining {family} seed={seed} size={cfg['teams']['pool_size']}")
            policies.append(pretrain_team(family, cfg["teams"]["pool_size"], seed,
                                          env_cfg,
                                          episodes=cfg["teams"]["pretrain_episodes"]))
    save_pool(pool_dir, policies)
    _log(f"wrote {len(policies)} policies to {pool_dir}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    _echo_config(cfg, cfg["out_dir"])
    result = trainer.train(cfg, log=_log)
    _log(f"done: {result['env_steps']} env steps, metrics at {result['metrics_path']}")
    return 0


def cmd_eval(args):
    model, _, cfg, _ = trainer.load_checkpoint(args.checkpoint)
    pool = []
    from .teams import load_pool
    if cfg["teams"]["m_groups"] != 0:
        pool = load_pool(cfg["teams"]["pool_dir"])
    summary = trainer.evaluate(model, cfg, pool,
                               args.episodes or cfg["train"]["eval_episodes"],
                               seed_tag=args.seed_tag,
                               m_groups=args.m_groups)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args):
    counts = [int(x) for x in args.groups.split(",")]
    summaries = trainer.sweep_groups(args.checkpoint, counts,
                                     n_episodes=args.episodes, log=_log)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "sweep.csv")
    with open(path, "w") as f:
        f.write("m_groups,episodes,return_mean,return_std,capture_rate\n")
        for s in summaries:
            f.write(f"{s['m_groups']},{s['episodes']},"
                    f"{s['return_mean']:.10g},{s['return_std']:.10g},"
                    f"{s['capture_rate']:.10g}\n")
    _log(f"wrote {path}")
    print(json.dumps(summaries, indent=2, sort_keys=True))
    return 0


def cmd_grad_check(args):
    names = args.networks.split(",") if args.networks else sorted(REGISTRY)
    worst = 0.0
    for name in names:
        report = check_gradients(name, trials=args.trials)
        err = report["max_rel_err"]
        worst = max(worst, err)
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} [{status}]")
    return 0 if worst < args.tolerance else 1


def cmd_validate_config(args):
    cfg = _load_config(args)
    if getattr(args, "out", None):
        _echo_config(cfg, args.out)
    else:
        print(cfg_mod.canonical_json(cfg))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mars")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config,
                       help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="config override; repeatable")
        p.add_argument("--seed", type=int, help="shortcut for --set seed=N")
        p.add_argument("--out", help="output directory (overrides out_dir)")

    common(sub.add_parser("pretrain-pool", help="self-play the uncontrolled team pool"))
    common(sub.add_parser("train", help="run MAHT training for one variant"))

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--m-groups", dest="m_groups", type=int)
    p.add_argument("--seed-tag", dest="seed_tag", type=int, default=0)

    p = sub.add_parser("sweep", help="evaluate across uncontrolled-group counts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--groups", default="1,2,3,4,5")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--networks", help="comma-separated ids (default: all)")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("validate-config", help="resolve and validate a config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    return parser


COMMANDS = {
    "pretrain-pool": cmd_pretrain_pool,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "grad-check": cmd_grad_check,
    "validate-config": cmd_validate_config,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return 2
    except UsageError as e:
        _log(f"usage error: {e}")
        return 3
    except FloatingPointError as e:
        _log(f"numerical failure: {e}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
