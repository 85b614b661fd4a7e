"""Finite-difference verification of reverse-mode gradients.

Networks register a builder under a string id; a builder returns a fresh
(ParameterSet, loss_fn) pair for a given seed, where loss_fn maps a
name->tensor dict to a scalar. The check compares reverse-mode gradients
against central finite differences entry by entry.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad

REGISTRY = {}


def register(name):
    def deco(builder):
        REGISTRY[name] = builder
        return builder

    return deco


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)


def check_gradients(network_id, trials=5, step=1e-5, seed0=0):
    """Compare analytic vs central finite-difference grads for a registered net.

    Returns {"network": id, "trials": [...], "max_rel_err": float} where each
    trial carries a per-parameter max relative error map.
    """
    if network_id not in REGISTRY:
        raise KeyError(f"unknown network id: {network_id}")
    builder = REGISTRY[network_id]
    report = {"network": network_id, "trials": []}
    worst = 0.0
    for t in range(trials):
        ps, loss_fn = builder(seed0 + 1000 * t)
        pvars = ps.vars()
        loss = loss_fn(pvars)
        ad.backward(loss)
        analytic = {k: (v.grad if v.grad is not None else np.zeros_like(v.value))
                    for k, v in pvars.items()}

        raw = {k: v.copy() for k, v in ps.arrays.items()}
        per_param = {}
        for name, arr in raw.items():
            fd = np.zeros_like(arr)
            flat = arr.reshape(-1)
            fdf = fd.reshape(-1)
            work = dict(raw)
            work[name] = arr
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(ad.val(loss_fn(work)))
                flat[i] = orig - step
                lo = float(ad.val(loss_fn(work)))
                flat[i] = orig
                fdf[i] = (hi - lo) / (2.0 * step)
            err = float(relative_error(analytic[name], fd).max())
            per_param[name] = err
            worst = max(worst, err)
        report["trials"].append(per_param)
    report["max_rel_err"] = worst
    return report


def max_error_over(network_ids, trials=5):
    return {nid: check_gradients(nid, trials=trials)["max_rel_err"] for nid in network_ids}
