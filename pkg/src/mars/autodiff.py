"""Reverse-mode autodiff over float64 numpy arrays.

Every op dispatches on its inputs: plain ndarrays flow through untouched
(fast no-grad path used during rollouts), while Var inputs build a tape.
Single-threaded per graph; float64 everywhere so finite-difference checks
have headroom.
"""
from __future__ import annotations

import numpy as np


class Var:
    """A node in the computation graph: value, accumulated grad, backward fn."""

    __slots__ = ("value", "grad", "parents", "bw")

    def __init__(self, value, parents=(), bw=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.bw = bw

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(value, grads):
    parents = tuple(v for v, _ in grads)
    fns = tuple(f for _, f in grads)

    def bw(g):
        for v, f in zip(parents, fns):
            c = f(g)
            v.grad = c if v.grad is None else v.grad + c

    return Var(value, parents, bw)


def add(a, b):
    av, bv = val(a), val(b)
    out = av + bv
    if not is_var(a, b):
        return out
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        grads.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return _make(out, grads)


def sub(a, b):
    av, bv = val(a), val(b)
    out = av - bv
    if not is_var(a, b):
        return out
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Var):
        grads.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return _make(out, grads)


def neg(a):
    if not is_var(a):
        return -val(a)
    return _make(-a.value, [(a, lambda g: -g)])


def mul(a, b):
    av, bv = val(a), val(b)
    out = av * bv
    if not is_var(a, b):
        return out
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Var):
        grads.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return _make(out, grads)


def div(a, b):
    av, bv = val(a), val(b)
    out = av / bv
    if not is_var(a, b):
        return out
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: _unbroadcast(g / bv, av.shape)))
    if isinstance(b, Var):
        grads.append((b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))
    return _make(out, grads)


def matmul(a, b):
    av, bv = val(a), val(b)
    out = av @ bv
    if not is_var(a, b):
        return out
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: g @ bv.T))
    if isinstance(b, Var):
        grads.append((b, lambda g: av.T @ g))
    return _make(out, grads)


def tanh(a):
    out = np.tanh(val(a))
    if not is_var(a):
        return out
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-val(a)))
    if not is_var(a):
        return out
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def exp(a):
    out = np.exp(val(a))
    if not is_var(a):
        return out
    return _make(out, [(a, lambda g: g * out)])


def log(a):
    av = val(a)
    out = np.log(av)
    if not is_var(a):
        return out
    return _make(out, [(a, lambda g: g / av)])


def square(a):
    av = val(a)
    out = av * av
    if not is_var(a):
        return out
    return _make(out, [(a, lambda g: g * 2.0 * av)])


def reshape(a, shape):
    av = val(a)
    out = av.reshape(shape)
    if not is_var(a):
        return out
    orig = av.shape
    return _make(out, [(a, lambda g: g.reshape(orig))])


def concat(xs, axis=1):
    vals = [val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not is_var(*xs):
        return out
    grads = []
    off = 0
    for x, v in zip(xs, vals):
        w = v.shape[axis]
        if isinstance(x, Var):
            lo, hi = off, off + w
            if axis == 0:
                grads.append((x, lambda g, lo=lo, hi=hi: g[lo:hi]))
            else:
                grads.append((x, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
        off += w
    return _make(out, grads)


def _row_scatter(shape, idx, g):
    """Zeros of `shape` with the rows of g summed in at row indices idx.

    np.bincount over flattened indices is much faster than np.add.at for
    the 2-D case; other ranks fall back to the generic scatter.
    """
    if g.ndim == 2 and len(shape) == 2:
        d = shape[1]
        flat = (idx[:, None] * d + np.arange(d)).ravel()
        return np.bincount(flat, weights=g.ravel(),
                           minlength=shape[0] * d).reshape(shape)
    z = np.zeros(shape)
    np.add.at(z, idx, g)
    return z


def gather_rows(a, idx):
    av = val(a)
    idx = np.asarray(idx)
    out = av[idx]
    if not is_var(a):
        return out
    shape = av.shape
    return _make(out, [(a, lambda g: _row_scatter(shape, idx, g))])


def take_along_rows(a, idx):
    """Pick one entry per row: out[i] = a[i, idx[i]]."""
    av = val(a)
    idx = np.asarray(idx)
    rows = np.arange(av.shape[0])
    out = av[rows, idx]
    if not is_var(a):
        return out
    shape = av.shape

    def bw(g):
        flat = rows * shape[1] + idx
        return np.bincount(flat, weights=g,
                           minlength=shape[0] * shape[1]).reshape(shape)

    return _make(out, [(a, bw)])


def segment_sum(a, seg, num):
    """Sum rows of a into num buckets given per-row segment ids."""
    av = val(a)
    seg = np.asarray(seg)
    out = _row_scatter((num,) + av.shape[1:], seg, av)
    if not is_var(a):
        return out
    return _make(out, [(a, lambda g: g[seg])])


def sum_all(a):
    av = val(a)
    out = np.asarray(av.sum())
    if not is_var(a):
        return out
    shape = av.shape
    return _make(out, [(a, lambda g: np.broadcast_to(g, shape).copy())])


def mean_all(a):
    av = val(a)
    n = av.size
    out = np.asarray(av.mean())
    if not is_var(a):
        return out
    shape = av.shape
    return _make(out, [(a, lambda g: np.broadcast_to(g / n, shape).copy())])


def log_softmax(a):
    av = val(a)
    m = av.max(axis=-1, keepdims=True)
    z = av - m
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    if not is_var(a):
        return out

    def bw(g):
        return g - np.exp(out) * g.sum(axis=-1, keepdims=True)

    return _make(out, [(a, bw)])


def softmax(a):
    return np.exp(log_softmax(val(a)))


def minimum(a, b):
    av, bv = val(a), val(b)
    out = np.minimum(av, bv)
    if not is_var(a, b):
        return out
    mask = av <= bv
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: _unbroadcast(g * mask, av.shape)))
    if isinstance(b, Var):
        grads.append((b, lambda g: _unbroadcast(g * (~mask), bv.shape)))
    return _make(out, grads)


def maximum(a, b):
    av, bv = val(a), val(b)
    out = np.maximum(av, bv)
    if not is_var(a, b):
        return out
    mask = av >= bv
    grads = []
    if isinstance(a, Var):
        grads.append((a, lambda g: _unbroadcast(g * mask, av.shape)))
    if isinstance(b, Var):
        grads.append((b, lambda g: _unbroadcast(g * (~mask), bv.shape)))
    return _make(out, grads)


def clip(a, lo, hi):
    return minimum(maximum(a, lo), hi)


def stop_grad(a):
    """Detach: returns a plain ndarray copy, cutting the tape."""
    return np.array(val(a))


def backward(loss):
    """Accumulate gradients from a scalar loss into every reachable Var."""
    if not isinstance(loss, Var):
        raise ValueError("backward() needs a Var produced by a recorded computation")
    if loss.value.size != 1:
        raise ValueError("loss must be scalar")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node.bw is not None and node.grad is not None:
            node.bw(node.grad)
