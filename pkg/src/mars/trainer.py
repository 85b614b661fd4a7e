"""Training orchestration: compositions, rollouts, updates, evaluation.

Every source of randomness is a counter-indexed stream derived from the
master seed, so a (config, seed) pair fully determines metrics and
checkpoints. Uncontrolled policies stay frozen; the update step is the
only place parameters change.
"""
from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .agent_model import EncoderDecoder
from .config import config_hash, variant_flags
from .envs import EnvConfig, make_env, obs_dim
from .errors import ConfigError, UsageError
from .nets import Adam, Dense, ParameterSet
from .policy import ActorCritic, actor_objective, gae, value_loss
from .rfm import RelationalCore
from .skeleton import build_full_graph, build_skeleton
from .teams import TeamComposition, act_uncontrolled, load_pool, pool_checksum, sample_composition


def stream(master_seed, purpose, *counters):
    """Deterministic child RNG stream: (seed, crc32(purpose), counters...)."""
    key = (int(master_seed), zlib.crc32(purpose.encode())) + tuple(int(c) for c in counters)
    return np.random.default_rng(np.random.SeedSequence(key))


def env_config_from(cfg):
    e = cfg["env"]
    return EnvConfig(grid_size=e["grid_size"], n_agents=e["n_agents"],
                     episode_limit=e["episode_limit"],
                     prey_policy_seed=e["prey_policy_seed"],
                     reward_capture=e["reward_capture"], step_cost=e["step_cost"])


def obs_dim_from(cfg):
    return obs_dim(cfg["env"]["n_agents"])


class Model:
    """All learned components for one variant, sharing a single ParameterSet."""

    def __init__(self, cfg, obs_dim, n_actions):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.flags = variant_flags(cfg["variant"])
        m = cfg["model"]
        self.ed_target_mode = m["ed_target_mode"]
        seed = int(np.random.SeedSequence(
            (cfg["seed"], zlib.crc32(b"params"))).generate_state(1)[0])
        self.ps = ParameterSet(seed)
        self.ed = None
        self.rfm = None
        if self.flags["use_ed"]:
            n_team = cfg["env"]["n_agents"] - 1 if self.ed_target_mode == "teammate" else 0
            self.ed = EncoderDecoder(self.ps, obs_dim, n_actions, m["enc_hidden"],
                                     m["d_embed"], m["dec_hidden"], n_teammates=n_team)
        if self.flags["use_rfm"]:
            self.rfm = RelationalCore(self.ps, m["rfm_dim"], m["rfm_dim"],
                                      m["rfm_global_dim"], m["rfm_hidden"])
            self.node_from_emb = Dense(self.ps, "node_emb", m["d_embed"], m["rfm_dim"])
            self.node_from_pos = Dense(self.ps, "node_pos", 2, m["rfm_dim"])
            self.unk = self.ps.add("node_unk", (m["rfm_dim"],), fan_in=m["rfm_dim"])
        self.feat_dim = obs_dim
        if self.flags["use_ed"]:
            self.feat_dim += m["d_embed"]
        if self.flags["use_rfm"]:
            self.feat_dim += m["rfm_dim"] + m["rfm_global_dim"]
        self.ac = ActorCritic(self.ps, self.feat_dim, self.feat_dim,
                              m["ac_hidden"], n_actions)

    def node_init(self, emb, relpos, controlled_rows, p):
        """Initial skeleton node features: controlled rows from their own
        behavior embedding, others from a shared learned vector plus their
        observed relative position."""
        mask = np.asarray(controlled_rows).reshape(-1, 1).astype(np.float64)
        from_emb = self.node_from_emb(emb, p)
        from_pos = ad.add(self.node_from_pos(relpos, p), p[self.unk])
        return ad.add(ad.mul(from_emb, mask), ad.mul(from_pos, 1.0 - mask))


@dataclass
class EpisodeData:
    """One recorded episode: aligned per-(step, agent) arrays plus the graph."""

    n: int
    length: int
    controlled_mask: np.ndarray          # (n,) bool
    senders: np.ndarray                  # (E,) flat; empty when RFM unused
    receivers: np.ndarray
    obs: np.ndarray                      # (L, n, d_o)
    relpos: np.ndarray                   # (L, n, 2)
    actions: np.ndarray                  # (L, n) int
    prev_actions: np.ndarray             # (L, n) int, -1 before the first step
    rewards: np.ndarray                  # (L,)
    dones: np.ndarray                    # (L,)
    logp: np.ndarray                     # (L, n); 0 on uncontrolled columns
    values: np.ndarray                   # (L, n)
    advantages: np.ndarray = None
    targets: np.ndarray = None
    success: bool = False
    n_edges: int = 0
    info: dict = field(default_factory=dict)


def _relative_positions(positions, controlled_ids, grid_size):
    """Mean relative position of every agent as seen from the controlled set."""
    scale = 1.0 / max(grid_size - 1, 1)
    anchor = positions[controlled_ids].mean(axis=0)
    return (positions - anchor) * scale


def build_graph(model, composition: TeamComposition, skeleton_rng, r):
    if not model.flags["use_rfm"]:
        return None
    group_of = composition.group_of()
    if model.flags["sparse_skeleton"]:
        return build_skeleton(group_of, r, skeleton_rng)
    return build_full_graph(composition.n_total, group_of)


def collect_rollout(model: Model, cfg, composition: TeamComposition, env_seed,
                    act_rng, skeleton_rng, greedy=False,
                    naive_policy=None) -> EpisodeData:
    """Run one episode under the mixed joint policy and record everything."""
    spec = dict(composition=composition, env_seed=env_seed,
                act_rng=act_rng, skeleton_rng=skeleton_rng)
    return collect_rollouts(model, cfg, [spec], greedy=greedy,
                            naive_policy=naive_policy)[0]


def collect_rollouts(model: Model, cfg, specs, greedy=False, naive_policy=None):
    """Run several episodes in lockstep, batching net calls across them.

    Each spec dict carries its own composition, env_seed, act_rng, and
    skeleton_rng, so one episode's recorded data draws only on that
    spec's streams. Episodes that finish early stop being stepped and
    recorded; the rest continue until every episode is done.
    """
    E = len(specs)
    if E == 0:
        raise UsageError("no rollout specs")
    env_cfg = env_config_from(cfg)
    n = env_cfg.n_agents
    d_o = obs_dim(n)
    p = model.ps.raw()
    use_nets = naive_policy is None
    use_ed = model.flags["use_ed"] and use_nets
    use_rfm = model.flags["use_rfm"] and use_nets
    soft_teams = cfg["teams"]["acting_mode"] != "greedy"

    envs, comps, senders_l, receivers_l = [], [], [], []
    obs_mat = np.zeros((E, n, d_o))
    relpos = np.zeros((E, n, 2))
    cmask_flat = np.zeros(E * n, dtype=bool)
    for e, spec in enumerate(specs):
        comp = spec["composition"]
        comp.validate()
        if comp.n_total != n:
            raise ConfigError("composition size does not match the env agent count")
        env = make_env(cfg["env"]["kind"], env_cfg)
        obs_mat[e] = np.stack(env.reset(spec["env_seed"]))
        envs.append(env)
        comps.append(comp)
        cids = np.array(sorted(comp.controlled_ids), dtype=np.int64)
        cmask_flat[e * n + cids] = True
        relpos[e] = _relative_positions(env.positions, cids, env.g)
        graph = build_graph(model, comp, spec["skeleton_rng"],
                            cfg["model"]["representatives"])
        senders_l.append(graph.senders() if graph is not None
                         else np.zeros(0, dtype=np.int64))
        receivers_l.append(graph.receivers() if graph is not None
                           else np.zeros(0, dtype=np.int64))

    if use_rfm:
        snd_all = np.concatenate([s + e * n for e, s in enumerate(senders_l)])
        rcv_all = np.concatenate([r + e * n for e, r in enumerate(receivers_l)])
        edge_graph = np.concatenate(
            [np.full(len(s), e, dtype=np.int64) for e, s in enumerate(senders_l)])
        node_graph = np.repeat(np.arange(E, dtype=np.int64), n)
    ctrl_rows = np.flatnonzero(cmask_flat)
    block_of = []  # per episode: (slice into ctrl rows, local agent ids)
    start = 0
    for e in range(E):
        ids = ctrl_rows[(ctrl_rows >= e * n) & (ctrl_rows < (e + 1) * n)] - e * n
        block_of.append((slice(start, start + len(ids)), ids))
        start += len(ids)

    h = model.ed.init_state(E * n) if use_ed else None
    prev = -np.ones((E, n), dtype=np.int64)
    active = np.ones(E, dtype=bool)
    rec = [{k: [] for k in ("obs", "relpos", "actions", "prev_actions",
                            "rewards", "logp", "values")} for _ in range(E)]
    success = [False] * E

    while active.any():
        flat_obs = obs_mat.reshape(E * n, d_o)
        emb = None
        if use_ed:
            h = model.ed.step_state(h, flat_obs, prev.reshape(-1), p)
            emb = model.ed.embed(h, p)
        if use_rfm:
            nodes0 = model.node_init(emb, relpos.reshape(E * n, 2), cmask_flat, p)
            node_out, u_out, _ = model.rfm.message_pass(
                nodes0, snd_all, rcv_all, p, cfg["model"]["rfm_rounds"],
                n_graphs=E, node_graph=node_graph, edge_graph=edge_graph)
        if use_nets:
            parts = [flat_obs]
            if use_ed:
                parts.append(emb)
            if use_rfm:
                parts.append(node_out)
                parts.append(np.repeat(u_out, n, axis=0))
            feats = np.concatenate(parts, axis=1)
            logits = model.ac.logits(feats[ctrl_rows], p)
            ls = logits - logits.max(axis=1, keepdims=True)
            ls = ls - np.log(np.exp(ls).sum(axis=1, keepdims=True))
            cum = np.exp(ls).cumsum(axis=1)
            values_all = model.ac.value(feats, p).reshape(E, n)

        for e in range(E):
            if not active[e]:
                continue
            block, ids = block_of[e]
            c = len(ids)
            actions = np.zeros(n, dtype=np.int64)
            logp = np.zeros(n)
            if use_nets:
                ls_e = ls[block]
                if greedy:
                    a_sel = ls_e.argmax(axis=1)
                else:
                    u = specs[e]["act_rng"].random((c, 1))
                    cum_e = cum[block]
                    a_sel = np.minimum(
                        (cum_e < u * cum_e[:, -1:]).sum(axis=1),
                        model.n_actions - 1)
                actions[ids] = a_sel
                logp[ids] = ls_e[np.arange(c), a_sel]
                values = values_all[e].copy()
            else:
                for i in ids:
                    actions[i] = naive_policy.greedy_action(obs_mat[e, i])
                values = np.zeros(n)
            for policy, gids in comps[e].groups:
                member_obs = [obs_mat[e, j] for j in gids]
                if soft_teams:
                    group_actions = act_uncontrolled(
                        policy, member_obs, mode="soft", rng=specs[e]["act_rng"])
                else:
                    group_actions = act_uncontrolled(policy, member_obs)
                for j, a in zip(gids, group_actions):
                    actions[j] = int(a)
            r = rec[e]
            r["obs"].append(obs_mat[e].copy())
            r["relpos"].append(relpos[e].copy())
            r["actions"].append(actions)
            r["prev_actions"].append(prev[e].copy())
            r["logp"].append(logp)
            r["values"].append(values)
            res = envs[e].step(actions)
            r["rewards"].append(res.reward)
            success[e] = success[e] or res.info.get("success", False)
            prev[e] = actions
            if res.done:
                active[e] = False
            else:
                obs_mat[e] = np.stack(res.observations)
                relpos[e] = _relative_positions(envs[e].positions, ids, envs[e].g)

    episodes = []
    for e in range(E):
        r = rec[e]
        L = len(r["rewards"])
        dones = np.zeros(L)
        dones[-1] = 1.0
        ep = EpisodeData(
            n=n, length=L, controlled_mask=cmask_flat[e * n:(e + 1) * n].copy(),
            senders=senders_l[e], receivers=receivers_l[e],
            obs=np.stack(r["obs"]), relpos=np.stack(r["relpos"]),
            actions=np.stack(r["actions"]),
            prev_actions=np.stack(r["prev_actions"]),
            rewards=np.array(r["rewards"]), dones=dones,
            logp=np.stack(r["logp"]), values=np.stack(r["values"]),
            success=success[e], n_edges=len(senders_l[e]))
        _fill_gae(ep, cfg["ppo"]["gamma"], cfg["ppo"]["lam"])
        episodes.append(ep)
    return episodes


def _fill_gae(ep: EpisodeData, gamma, lam):
    L, n = ep.length, ep.n
    ep.advantages = np.zeros((L, n))
    ep.targets = np.zeros((L, n))
    for i in range(n):
        vals = np.concatenate([ep.values[:, i], [0.0]])
        adv, tgt = gae(ep.rewards, vals, ep.dones, gamma, lam)
        ep.advantages[:, i] = adv
        ep.targets[:, i] = tgt


def _teammate_actions(actions_flat_row, n):
    """For each (t, i) row, the actions of all other agents at step t."""
    L = actions_flat_row.shape[0]
    out = np.zeros((L * n, n - 1), dtype=np.int64)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        out[i::n] = actions_flat_row[:, others]
    return out


def build_losses(model: Model, episodes, cfg, pvars, perturb=None):
    """Recorded forward pass over a chunk of episodes; returns loss Vars.

    The actor loss is assembled exclusively from controlled-agent rows;
    the critic loss covers every transition. perturb(e, kind, array) lets
    tests alter recorded batch fields before losses are formed.
    """
    if not episodes:
        raise UsageError("empty batch")
    ppo = cfg["ppo"]
    n = episodes[0].n
    rows = len(episodes) * n
    t_max = max(ep.length for ep in episodes)

    def get(e, kind, arr):
        return arr if perturb is None else perturb(e, kind, arr)

    obs_pad = np.zeros((t_max, rows, model.obs_dim))
    prev_pad = -np.ones((t_max, rows), dtype=np.int64)
    for e, ep in enumerate(episodes):
        obs_pad[:ep.length, e * n:(e + 1) * n] = get(e, "obs", ep.obs)
        prev_pad[:ep.length, e * n:(e + 1) * n] = ep.prev_actions

    emb_all = None
    emb_const = None
    if model.flags["use_ed"]:
        h = model.ed.init_state(rows)
        states = []
        for t in range(t_max):
            h = model.ed.step_state(h, obs_pad[t], prev_pad[t], pvars)
            states.append(h)
        emb_all = model.ed.embed(ad.concat(states, axis=0), pvars)  # (t_max*rows, d)
        emb_const = ad.val(emb_all)

    node_all = u_all = node_const = u_const = None
    node_offsets, u_offsets = [], []
    if model.flags["use_rfm"]:
        # stack every timestep of every episode into one multigraph call:
        # each (episode, step) pair is its own graph over n agent nodes
        nodes0_l, snd_l, rcv_l, ng_l, eg_l = [], [], [], [], []
        node_off = g_off = 0
        for e, ep in enumerate(episodes):
            L = ep.length
            flat = (np.arange(L)[:, None] * rows + e * n + np.arange(n)[None, :]).reshape(-1)
            nodes0_l.append(model.node_init(
                emb_const[flat], ep.relpos.reshape(L * n, 2),
                np.tile(ep.controlled_mask, L), pvars))
            offs = (np.arange(L, dtype=np.int64) * n)[:, None]
            snd_l.append((ep.senders[None, :] + offs).reshape(-1) + node_off)
            rcv_l.append((ep.receivers[None, :] + offs).reshape(-1) + node_off)
            ng_l.append(np.repeat(np.arange(L, dtype=np.int64), n) + g_off)
            eg_l.append(np.repeat(np.arange(L, dtype=np.int64), len(ep.senders)) + g_off)
            node_offsets.append(node_off)
            u_offsets.append(g_off)
            node_off += L * n
            g_off += L
        node_all, u_all, _ = model.rfm.message_pass(
            ad.concat(nodes0_l, axis=0), np.concatenate(snd_l),
            np.concatenate(rcv_l), pvars, cfg["model"]["rfm_rounds"],
            n_graphs=g_off, node_graph=np.concatenate(ng_l),
            edge_graph=np.concatenate(eg_l))
        node_const = ad.val(node_all)
        u_const = ad.val(u_all)

    actor_feats, actor_actions, actor_old_logp, actor_adv = [], [], [], []
    critic_const, critic_targets, critic_node_idx, critic_u_idx = [], [], [], []
    ed_emb_idx, ed_obs, ed_act, ed_team_act = [], [], [], []

    for e, ep in enumerate(episodes):
        L = ep.length
        obs = get(e, "obs", ep.obs)
        adv = get(e, "advantages", ep.advantages)
        tgt = get(e, "targets", ep.targets)
        acts = get(e, "actions", ep.actions)
        logp = get(e, "logp", ep.logp)

        idx_t = np.repeat(np.arange(L), n)
        idx_i = np.tile(np.arange(n), L)
        flat_emb = idx_t * rows + e * n + idx_i
        obs_flat = obs.reshape(L * n, model.obs_dim)
        feat_cols = [obs_flat]
        if model.flags["use_ed"]:
            feat_cols.append(emb_const[flat_emb])
        if model.flags["use_rfm"]:
            node_idx = node_offsets[e] + idx_t * n + idx_i
            u_idx = u_offsets[e] + idx_t
            feat_cols.append(node_const[node_idx])
            feat_cols.append(u_const[u_idx])
        feats_flat = np.concatenate(feat_cols, axis=1)

        ctrl = ep.controlled_mask[idx_i]
        actor_feats.append(feats_flat[ctrl])
        actor_actions.append(acts.reshape(-1)[ctrl])
        actor_old_logp.append(logp.reshape(-1)[ctrl])
        actor_adv.append(adv.reshape(-1)[ctrl])

        critic_const.append(np.concatenate([obs_flat, emb_const[flat_emb]], axis=1)
                            if model.flags["use_ed"] else obs_flat)
        critic_targets.append(tgt.reshape(-1))
        if model.flags["use_rfm"]:
            critic_node_idx.append(node_idx)
            critic_u_idx.append(u_idx)

        if model.flags["use_ed"]:
            ed_emb_idx.append(flat_emb[ctrl])
            ed_obs.append(obs_flat[ctrl])
            ed_act.append(acts.reshape(-1)[ctrl])
            if model.ed_target_mode == "teammate":
                ed_team_act.append(_teammate_actions(acts, n)[ctrl])

    adv_arr = np.concatenate(actor_adv)
    adv_norm = (adv_arr - adv_arr.mean()) / (adv_arr.std() + 1e-8)
    logits = model.ac.logits(np.concatenate(actor_feats), pvars)
    actor_loss, surrogate, entropy = actor_objective(
        logits, np.concatenate(actor_actions), np.concatenate(actor_old_logp),
        adv_norm, ppo["clip_eps"], ppo["ent_coef"])

    if model.flags["use_rfm"]:
        critic_in = ad.concat(
            [np.concatenate(critic_const),
             ad.gather_rows(node_all, np.concatenate(critic_node_idx)),
             ad.gather_rows(u_all, np.concatenate(critic_u_idx))], axis=1)
    else:
        critic_in = np.concatenate(critic_const)
    critic = value_loss(model.ac.value(critic_in, pvars),
                        np.concatenate(critic_targets))

    losses = {"actor": actor_loss, "critic": critic, "entropy": entropy,
              "surrogate": surrogate}
    if model.flags["use_ed"]:
        emb_rows = ad.gather_rows(emb_all, np.concatenate(ed_emb_idx))
        if model.ed_target_mode == "teammate":
            recon, nll = model.ed.loss_terms_teammate(
                emb_rows, np.concatenate(ed_obs), np.concatenate(ed_team_act), pvars)
        else:
            recon, nll = model.ed.loss_terms(
                emb_rows, np.concatenate(ed_obs), np.concatenate(ed_act), pvars)
        losses["ed_recon"] = recon
        losses["ed_nll"] = nll
        losses["ed"] = ad.add(recon, nll)
    total = ad.add(actor_loss, ad.mul(ppo["vf_coef"], critic))
    if model.flags["use_ed"]:
        total = ad.add(total, ad.mul(ppo["ed_coef"], losses["ed"]))
    losses["total"] = total
    return losses


def update(model: Model, adam: Adam, episodes, cfg):
    """PPO epochs over episode minibatches; returns averaged stats."""
    ppo = cfg["ppo"]
    n_mb = max(1, min(ppo["minibatches"], len(episodes)))
    chunks = [episodes[k::n_mb] for k in range(n_mb)]
    stats = {"actor_loss": [], "critic_loss": [], "entropy": [], "grad_norm": [],
             "ed_loss": [], "ed_recon": [], "ed_nll": []}
    for _ in range(ppo["epochs"]):
        for chunk in chunks:
            if not chunk:
                continue
            pvars = model.ps.vars()
            losses = build_losses(model, chunk, cfg, pvars)
            if not np.isfinite(ad.val(losses["total"])):
                raise FloatingPointError("non-finite loss; aborting update")
            ad.backward(losses["total"])
            grads = model.ps.grads_from(pvars)
            norm = adam.step(grads, lr=ppo["lr"], max_grad_norm=ppo["max_grad_norm"])
            stats["actor_loss"].append(float(ad.val(losses["actor"])))
            stats["critic_loss"].append(float(ad.val(losses["critic"])))
            stats["entropy"].append(float(ad.val(losses["entropy"])))
            stats["grad_norm"].append(norm)
            if "ed" in losses:
                stats["ed_loss"].append(float(ad.val(losses["ed"])))
                stats["ed_recon"].append(float(ad.val(losses["ed_recon"])))
                stats["ed_nll"].append(float(ad.val(losses["ed_nll"])))
    return {k: (float(np.mean(v)) if v else 0.0) for k, v in stats.items()}


def evaluate(model: Model, cfg, pool, n_episodes, seed_tag, m_groups=None,
             naive_policy=None):
    """Greedy-mode episodes on freshly sampled held-out compositions.

    Evaluation streams use purposes disjoint from training streams, so
    eval compositions and env seeds never overlap training ones.
    """
    if n_episodes <= 0:
        raise UsageError("evaluate needs at least one episode")
    m = cfg["teams"]["m_groups"] if m_groups is None else m_groups
    if isinstance(m, list):
        m = m[-1]
    n_total = cfg["env"]["n_agents"]
    specs = [dict(
        composition=sample_composition(
            pool, n_total, m, stream(cfg["seed"], "eval_compose", seed_tag, k)),
        env_seed=int(stream(cfg["seed"], "eval_env", seed_tag, k).integers(0, 2 ** 31)),
        act_rng=stream(cfg["seed"], "eval_act", seed_tag, k),
        skeleton_rng=stream(cfg["seed"], "eval_skeleton", seed_tag, k))
        for k in range(n_episodes)]
    episodes = collect_rollouts(model, cfg, specs, greedy=True,
                                naive_policy=naive_policy)
    returns = np.array([float(ep.rewards.sum()) for ep in episodes])
    captures = sum(int(ep.success) for ep in episodes)
    return {"episodes": n_episodes,
            "return_mean": float(returns.mean()),
            "return_std": float(returns.std()),
            "capture_rate": captures / n_episodes}


METRIC_BASE = ["env_steps", "iteration", "test_return_mean", "test_return_std",
               "capture_rate", "actor_loss", "critic_loss", "entropy", "grad_norm"]


def metric_columns(flags):
    cols = list(METRIC_BASE)
    if flags["use_ed"]:
        cols += ["ed_loss", "ed_recon", "ed_nll"]
    if flags["use_rfm"]:
        cols += ["mean_edges"]
    return cols


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def pick_naive_policy(model, cfg, pool):
    """Best pool member when dropped into the controlled slots."""
    best = None
    for tp in pool:
        summary = evaluate(model, cfg, pool, max(cfg["train"]["eval_episodes"], 5),
                           seed_tag=777, naive_policy=tp)
        if best is None or summary["return_mean"] > best[0]:
            best = (summary["return_mean"], tp)
    return best[1]


def train(cfg, log=None):
    """Run MAHT training to total_steps; writes metrics.csv and checkpoints."""
    flags = variant_flags(cfg["variant"])
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    m_spec = cfg["teams"]["m_groups"]
    pool = []
    if m_spec != 0 or not flags["learn"]:
        pool_dir = cfg["teams"]["pool_dir"]
        if not pool_dir or not os.path.isdir(pool_dir):
            raise ConfigError("pretrained pool directory missing")
        pool = load_pool(pool_dir)
    pool_sum_before = pool_checksum(pool)

    model = Model(cfg, obs_dim_from(cfg), 5)
    adam = Adam(model.ps, lr=cfg["ppo"]["lr"])
    naive_policy = pick_naive_policy(model, cfg, pool) if not flags["learn"] else None

    metrics_path = os.path.join(out_dir, "metrics.csv")
    cols = metric_columns(flags)
    rows_written = 0
    env_steps = 0
    iteration = 0
    episode_counter = 0
    next_eval = cfg["train"]["eval_interval"]
    next_ckpt = cfg["train"]["checkpoint_interval"]
    total = cfg["train"]["total_steps"]

    with open(metrics_path, "w") as mf:
        mf.write(",".join(cols) + "\n")
        while env_steps < total:
            specs = []
            for _ in range(cfg["train"]["rollout_episodes"]):
                k = episode_counter
                episode_counter += 1
                if isinstance(m_spec, list):
                    m = int(stream(cfg["seed"], "m_groups", k).integers(
                        m_spec[0], m_spec[1] + 1))
                else:
                    m = m_spec
                specs.append(dict(
                    composition=sample_composition(
                        pool, cfg["env"]["n_agents"], m,
                        stream(cfg["seed"], "compose", k)),
                    env_seed=int(stream(cfg["seed"], "env", k).integers(0, 2 ** 31)),
                    act_rng=stream(cfg["seed"], "act", k),
                    skeleton_rng=stream(cfg["seed"], "skeleton", k)))
            episodes = collect_rollouts(model, cfg, specs,
                                        naive_policy=naive_policy)
            edge_counts = [ep.n_edges for ep in episodes]
            env_steps += sum(ep.length for ep in episodes)
            iteration += 1
            if flags["learn"]:
                try:
                    stats = update(model, adam, episodes, cfg)
                except FloatingPointError:
                    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"),
                                    model, adam, cfg, iteration, env_steps,
                                    episode_counter)
                    raise
            else:
                stats = {k2: 0.0 for k2 in ("actor_loss", "critic_loss", "entropy",
                                            "grad_norm", "ed_loss", "ed_recon",
                                            "ed_nll")}
            if env_steps >= next_eval or env_steps >= total:
                summary = evaluate(model, cfg, pool, cfg["train"]["eval_episodes"],
                                   seed_tag=rows_written, naive_policy=naive_policy)
                row = {
                    "env_steps": env_steps, "iteration": iteration,
                    "test_return_mean": summary["return_mean"],
                    "test_return_std": summary["return_std"],
                    "capture_rate": summary["capture_rate"],
                    "actor_loss": stats["actor_loss"],
                    "critic_loss": stats["critic_loss"],
                    "entropy": stats["entropy"],
                    "grad_norm": stats["grad_norm"],
                    "ed_loss": stats["ed_loss"], "ed_recon": stats["ed_recon"],
                    "ed_nll": stats["ed_nll"],
                    "mean_edges": float(np.mean(edge_counts)),
                }
                mf.write(",".join(_fmt(row[c]) for c in cols) + "\n")
                mf.flush()
                rows_written += 1
                while next_eval <= env_steps:
                    next_eval += cfg["train"]["eval_interval"]
                if log:
                    log(f"steps={env_steps} return={summary['return_mean']:.3f}")
            if env_steps >= next_ckpt:
                save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), model,
                                adam, cfg, iteration, env_steps, episode_counter)
                while next_ckpt <= env_steps:
                    next_ckpt += cfg["train"]["checkpoint_interval"]

    if pool_checksum(pool) != pool_sum_before:
        raise RuntimeError("uncontrolled pool changed during training")
    ckpt_path = os.path.join(out_dir, "checkpoint.npz")
    save_checkpoint(ckpt_path, model, adam, cfg, iteration, env_steps,
                    episode_counter)
    return {"metrics_path": metrics_path, "checkpoint_path": ckpt_path,
            "env_steps": env_steps, "iterations": iteration}


def save_checkpoint(path, model: Model, adam: Adam, cfg, iteration, env_steps,
                    episode_counter):
    arrays = {f"param.{k}": v for k, v in model.ps.arrays.items()}
    for k, v in adam.state_arrays().items():
        arrays[f"opt.{k}"] = v
    arrays["meta.json"] = np.frombuffer(json.dumps({
        "config": cfg, "config_hash": config_hash(cfg),
        "iteration": iteration, "env_steps": env_steps,
        "episode_counter": episode_counter,
        "param_seed": model.ps.rng_seed,
    }, sort_keys=True).encode(), dtype=np.uint8)
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path, expect_cfg=None):
    data = np.load(path)
    meta = json.loads(bytes(data["meta.json"].tobytes()).decode())
    cfg = meta["config"]
    if expect_cfg is not None:
        for section in ("env", "model", "variant"):
            if expect_cfg[section] != cfg[section]:
                raise ConfigError(f"checkpoint/config mismatch in '{section}'")
    model = Model(cfg, obs_dim_from(cfg), 5)
    for k in list(model.ps.arrays):
        model.ps.arrays[k] = np.array(data[f"param.{k}"])
    adam = Adam(model.ps, lr=cfg["ppo"]["lr"])
    adam.load_state_arrays({k[len("opt."):]: data[k] for k in data.files
                            if k.startswith("opt.")})
    return model, adam, cfg, meta


def sweep_groups(checkpoint_path, group_counts, n_episodes=None, log=None):
    """Evaluate a checkpoint across uncontrolled-group counts."""
    model, _, cfg, _ = load_checkpoint(checkpoint_path)
    pool = load_pool(cfg["teams"]["pool_dir"])
    n_eps = n_episodes or cfg["train"]["eval_episodes"]
    summaries = []
    for m in group_counts:
        if m + 1 > cfg["env"]["n_agents"] or m > len(pool):
            if log:
                log(f"skipping infeasible m={m}")
            continue
        s = evaluate(model, cfg, pool, n_eps, seed_tag=9000 + m, m_groups=m)
        s["m_groups"] = m
        summaries.append(s)
    return summaries
