"""Parameter storage, dense/recurrent building blocks, and Adam.

A ParameterSet is a named map of float64 arrays seeded at construction:
same seed, same bit-identical initialization. Layers register their
parameters at build time and are called with a dict mapping names either
to raw arrays (no-grad rollout path) or to Vars (training path).
"""
from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad


class ParameterSet:
    """Named float64 parameter tensors with seed-reproducible init."""

    def __init__(self, rng_seed: int):
        self.rng_seed = int(rng_seed)
        self.arrays: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(np.random.SeedSequence(self.rng_seed))

    def add(self, name, shape, fan_in=None, zero=False):
        if name in self.arrays:
            raise ValueError(f"duplicate parameter id: {name}")
        if zero or fan_in == 0:
            arr = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in if fan_in else shape[0])
            arr = self._rng.uniform(-bound, bound, size=shape)
        self.arrays[name] = np.asarray(arr, dtype=np.float64)
        return name

    def raw(self):
        """View for no-grad forward passes."""
        return self.arrays

    def vars(self):
        """Fresh leaf Vars for one recorded forward pass."""
        return {k: ad.Var(v) for k, v in self.arrays.items()}

    def grads_from(self, pvars):
        return {k: v.grad for k, v in pvars.items() if v.grad is not None}

    def copy(self):
        ps = ParameterSet.__new__(ParameterSet)
        ps.rng_seed = self.rng_seed
        ps.arrays = {k: v.copy() for k, v in self.arrays.items()}
        ps._rng = None
        return ps

    def checksum(self):
        h = hashlib.sha256()
        for k in sorted(self.arrays):
            h.update(k.encode())
            h.update(self.arrays[k].tobytes())
        return h.hexdigest()

    def n_entries(self):
        return sum(v.size for v in self.arrays.values())


class Dense:
    def __init__(self, ps, name, fan_in, fan_out, zero=False):
        self.w = ps.add(f"{name}.w", (fan_in, fan_out), fan_in=fan_in, zero=zero)
        self.b = ps.add(f"{name}.b", (fan_out,), fan_in=fan_in, zero=zero)

    def __call__(self, x, p):
        return ad.add(ad.matmul(x, p[self.w]), p[self.b])


class Mlp:
    """Dense stack with tanh hidden activations and a linear output."""

    def __init__(self, ps, name, in_dim, hidden, out_dim, zero=False):
        dims = [in_dim] + list(hidden) + [out_dim]
        self.layers = [
            Dense(ps, f"{name}.{i}", dims[i], dims[i + 1], zero=zero)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x, p):
        for layer in self.layers[:-1]:
            x = ad.tanh(layer(x, p))
        return self.layers[-1](x, p)


class GruCell:
    """Gated recurrent cell: update/reset gates plus tanh candidate.

    With zero state and zero parameters the next state is exactly zero,
    and states stay inside (-1, 1) for any input.
    """

    def __init__(self, ps, name, in_dim, dim):
        self.dim = dim
        self.wz = ps.add(f"{name}.wz", (in_dim, dim), fan_in=in_dim)
        self.uz = ps.add(f"{name}.uz", (dim, dim), fan_in=dim)
        self.bz = ps.add(f"{name}.bz", (dim,), fan_in=in_dim)
        self.wr = ps.add(f"{name}.wr", (in_dim, dim), fan_in=in_dim)
        self.ur = ps.add(f"{name}.ur", (dim, dim), fan_in=dim)
        self.br = ps.add(f"{name}.br", (dim,), fan_in=in_dim)
        self.wc = ps.add(f"{name}.wc", (in_dim, dim), fan_in=in_dim)
        self.uc = ps.add(f"{name}.uc", (dim, dim), fan_in=dim)
        self.bc = ps.add(f"{name}.bc", (dim,), fan_in=in_dim)

    def step(self, h, x, p):
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p[self.wz]), ad.matmul(h, p[self.uz])), p[self.bz]))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p[self.wr]), ad.matmul(h, p[self.ur])), p[self.br]))
        c = ad.tanh(ad.add(ad.add(ad.matmul(x, p[self.wc]), ad.matmul(ad.mul(r, h), p[self.uc])), p[self.bc]))
        one_minus_z = ad.sub(1.0, z)
        return ad.add(ad.mul(one_minus_z, h), ad.mul(z, c))


class Adam:
    """Adaptive-moment optimizer over a ParameterSet, with global norm clip."""

    def __init__(self, ps: ParameterSet, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.ps = ps
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in ps.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in ps.arrays.items()}

    def step(self, grads, lr=None, max_grad_norm=None):
        """Apply one update from a name->grad dict; returns the global grad norm."""
        lr = self.lr if lr is None else lr
        sq = 0.0
        for g in grads.values():
            sq += float((g * g).sum())
        norm = float(np.sqrt(sq))
        scale = 1.0
        if max_grad_norm is not None and norm > max_grad_norm > 0:
            scale = max_grad_norm / (norm + 1e-12)
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            g = g * scale
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            self.ps.arrays[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)
        return norm

    def state_arrays(self):
        out = {"adam.t": np.asarray(float(self.t))}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrs):
        self.t = int(arrs["adam.t"])
        for k in self.m:
            self.m[k] = np.array(arrs[f"adam.m.{k}"])
            self.v[k] = np.array(arrs[f"adam.v.{k}"])
