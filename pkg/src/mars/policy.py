"""Actor-critic heads and independent-PPO loss machinery.

The actor maps per-agent features to action logits; the critic to a scalar
value. Advantage estimation follows the standard recursive generalized
form. The clipped surrogate is averaged over controlled-agent transitions
only; the value loss averages over every transition.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import UsageError
from .gradcheck import register
from .nets import Mlp, ParameterSet


class ActorCritic:
    def __init__(self, ps: ParameterSet, actor_in, critic_in, hidden, n_actions, name="ac"):
        self.n_actions = n_actions
        self.actor = Mlp(ps, f"{name}.actor", actor_in, [hidden, hidden], n_actions)
        self.critic = Mlp(ps, f"{name}.critic", critic_in, [hidden, hidden], 1)

    def logits(self, x, p):
        return self.actor(np.atleast_2d(ad.val(x)) if not ad.is_var(x) else x, p)

    def value(self, x, p):
        out = self.critic(np.atleast_2d(ad.val(x)) if not ad.is_var(x) else x, p)
        return ad.reshape(out, (-1,))

    def act(self, features, p, rng=None, greedy=False):
        """Sample (or argmax) one action; returns (action, log_prob, value)."""
        logits = ad.val(self.logits(features, p))[0]
        logp = logits - logits.max()
        logp = logp - np.log(np.exp(logp).sum())
        probs = np.exp(logp)
        if greedy or rng is None:
            action = int(np.argmax(probs))
        else:
            action = int(rng.choice(self.n_actions, p=probs / probs.sum()))
        value = float(ad.val(self.value(features, p))[0])
        return action, float(logp[action]), value


def gae(rewards, values, dones, gamma, lam):
    """Generalized advantage estimation.

    values has length T+1 (bootstrap value last); dones[t] true means the
    episode terminated at step t, masking the bootstrap. Returns
    (advantages, value targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = len(rewards)
    if len(values) != T + 1 or len(dones) != T:
        raise UsageError("gae: sequence lengths misaligned")
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
    return adv, adv + values[:T]


def clipped_surrogate(new_logp, old_logp, advantages, clip_eps):
    """Mean PPO clipped objective (to be maximized)."""
    ratio = ad.exp(ad.sub(new_logp, np.asarray(old_logp, dtype=np.float64)))
    advantages = np.asarray(advantages, dtype=np.float64)
    unclipped = ad.mul(ratio, advantages)
    clipped = ad.mul(ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), advantages)
    return ad.mean_all(ad.minimum(unclipped, clipped))


def entropy_from_logits(logits):
    """Mean per-row entropy of the softmax distribution."""
    ls = ad.log_softmax(logits)
    b = ad.val(ls).shape[0]
    return ad.neg(ad.div(ad.sum_all(ad.mul(ad.exp(ls), ls)), float(b)))


def value_loss(v_pred, targets):
    """Half mean squared error against the value targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if ad.val(v_pred).size == 0:
        raise UsageError("value_loss: empty batch")
    return ad.mul(0.5, ad.mean_all(ad.square(ad.sub(v_pred, targets))))


def actor_objective(logits, actions, old_logp, advantages, clip_eps, ent_coef):
    """Full actor loss: negative clipped surrogate minus entropy bonus."""
    actions = np.asarray(actions, dtype=np.int64)
    if actions.size == 0:
        raise UsageError("actor_objective: empty controlled batch")
    new_logp = ad.take_along_rows(ad.log_softmax(logits), actions)
    surr = clipped_surrogate(new_logp, old_logp, advantages, clip_eps)
    ent = entropy_from_logits(logits)
    loss = ad.sub(ad.neg(surr), ad.mul(ent_coef, ent))
    return loss, surr, ent


@register("actor")
def _build_actor(seed):
    rng = np.random.default_rng(seed)
    ps = ParameterSet(seed)
    ac = ActorCritic(ps, actor_in=7, critic_in=7, hidden=8, n_actions=5)
    x = rng.normal(size=(6, 7))
    actions = rng.integers(0, 5, size=6)
    old_logp = -np.abs(rng.normal(size=6)) - 0.5
    adv = rng.normal(size=6)

    def loss_fn(p):
        loss, _, _ = actor_objective(ac.logits(x, p), actions, old_logp, adv,
                                     clip_eps=0.2, ent_coef=0.01)
        return loss

    return ps, loss_fn


@register("critic")
def _build_critic(seed):
    rng = np.random.default_rng(seed)
    ps = ParameterSet(seed)
    ac = ActorCritic(ps, actor_in=7, critic_in=9, hidden=8, n_actions=5)
    x = rng.normal(size=(6, 9))
    targets = rng.normal(size=6)
    return ps, lambda p: value_loss(ac.value(x, p), targets)
