"""Trajectory encoder-decoder producing per-agent behavior embeddings.

The encoder runs a gated recurrent cell over (observation, previous-action)
pairs and projects the final state to a fixed-size embedding. Two decoder
heads reconstruct the current observation and predict the current action;
their joint loss is squared reconstruction error minus the log-probability
of the taken action. Consumers of the embedding receive a gradient-stopped
copy, so only this loss trains the encoder.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .gradcheck import register
from .nets import Dense, GruCell, Mlp, ParameterSet


def one_hot(idx, n):
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None].clip(0), 1.0, axis=-1)
    out[idx < 0] = 0.0  # action index -1 encodes "no previous action"
    return out


class EncoderDecoder:
    def __init__(self, ps: ParameterSet, obs_dim, n_actions, hidden, d_embed,
                 dec_hidden=32, name="ed", n_teammates=0):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.d_embed = d_embed
        self.n_teammates = n_teammates
        self.cell = GruCell(ps, f"{name}.enc", obs_dim + n_actions, hidden)
        self.proj = Dense(ps, f"{name}.proj", hidden, d_embed)
        self.dec_obs = Mlp(ps, f"{name}.dec_obs", d_embed, [dec_hidden], obs_dim)
        self.dec_act = Mlp(ps, f"{name}.dec_act", d_embed, [dec_hidden], n_actions)
        # optional mode: predict every visible teammate's action instead of own
        self.dec_team = None
        if n_teammates > 0:
            self.dec_team = Mlp(ps, f"{name}.dec_team", d_embed, [dec_hidden],
                                n_teammates * n_actions)

    def init_state(self, batch=1):
        return np.zeros((batch, self.hidden))

    def step_state(self, h, obs, prev_act, p):
        """One recurrent step; prev_act is an int array, -1 for step one."""
        x = np.concatenate([np.atleast_2d(ad.val(obs)),
                            one_hot(prev_act, self.n_actions)], axis=1)
        return self.cell.step(h, x, p)

    def embed(self, h, p):
        return self.proj(h, p)

    def encode(self, obs_seq, prev_acts, p):
        """Run the full trajectory; returns the embedding at the final step."""
        obs_seq = np.atleast_2d(np.asarray(obs_seq, dtype=np.float64))
        if obs_seq.shape[0] == 0:
            raise ValueError("trajectory must be nonempty")
        h = self.init_state(1)
        for k in range(obs_seq.shape[0]):
            h = self.step_state(h, obs_seq[k:k + 1], np.array([prev_acts[k]]), p)
        return self.embed(h, p)

    def decode(self, emb, p):
        return self.dec_obs(emb, p), self.dec_act(emb, p)

    def loss_terms(self, emb, target_obs, target_act, p):
        """(reconstruction, action-NLL) averaged over the batch."""
        target_obs = np.atleast_2d(np.asarray(target_obs, dtype=np.float64))
        target_act = np.atleast_1d(np.asarray(target_act, dtype=np.int64))
        if ((target_act < 0) | (target_act >= self.n_actions)).any():
            raise ValueError("action index out of range")
        obs_hat, logits = self.decode(emb, p)
        diff = ad.sub(obs_hat, target_obs)
        b = target_obs.shape[0]
        recon = ad.div(ad.sum_all(ad.square(diff)), float(b))
        logp = ad.take_along_rows(ad.log_softmax(logits), target_act)
        nll = ad.neg(ad.div(ad.sum_all(logp), float(b)))
        return recon, nll

    def loss_terms_teammate(self, emb, target_obs, teammate_actions, p):
        """Teammate-target mode: reconstruction plus mean NLL over the
        actions of all other visible agents."""
        if self.dec_team is None:
            raise ValueError("teammate mode needs n_teammates > 0")
        target_obs = np.atleast_2d(np.asarray(target_obs, dtype=np.float64))
        acts = np.atleast_2d(np.asarray(teammate_actions, dtype=np.int64))
        b = target_obs.shape[0]
        obs_hat = self.dec_obs(emb, p)
        recon = ad.div(ad.sum_all(ad.square(ad.sub(obs_hat, target_obs))), float(b))
        logits = ad.reshape(self.dec_team(emb, p), (b * self.n_teammates, self.n_actions))
        logp = ad.take_along_rows(ad.log_softmax(logits), acts.reshape(-1))
        nll = ad.neg(ad.div(ad.sum_all(logp), float(b * self.n_teammates)))
        return recon, nll

    def ed_loss(self, obs_seq, prev_acts, target_obs, target_act, p):
        emb = self.encode(obs_seq, prev_acts, p)
        recon, nll = self.loss_terms(emb, target_obs, target_act, p)
        return ad.add(recon, nll), recon, nll


@register("encoder_decoder")
def _build_ed(seed):
    rng = np.random.default_rng(seed)
    obs_dim, n_actions, hidden, d_embed = 6, 5, 8, 6
    ps = ParameterSet(seed)
    ed = EncoderDecoder(ps, obs_dim, n_actions, hidden, d_embed, dec_hidden=8)
    steps = 4
    obs_seq = rng.normal(size=(steps, obs_dim))
    prev = np.concatenate([[-1], rng.integers(0, n_actions, size=steps - 1)])
    target_obs = obs_seq[-1]
    target_act = int(rng.integers(0, n_actions))

    def loss_fn(p):
        loss, _, _ = ed.ed_loss(obs_seq, prev, target_obs, [target_act], p)
        return loss

    return ps, loss_fn
