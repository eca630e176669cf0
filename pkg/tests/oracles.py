"""Independent reference routines used only by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_flow(node_count, edges, source, sink):
    """(max flow value, min cost) by enumerating every integral edge flow."""
    best = None
    ranges = [range(cap + 1) for _, _, cap, _ in edges]
    for flows in itertools.product(*ranges):
        balance = [0] * node_count
        for (u, v, _, _), f in zip(edges, flows):
            balance[u] -= f
            balance[v] += f
        if any(b != 0 for i, b in enumerate(balance) if i not in (source, sink)):
            continue
        value = -balance[source]
        if value < 0:
            continue
        cost = sum(f * w for (_, _, _, w), f in zip(edges, flows))
        key = (-value, cost)
        if best is None or key < best:
            best = key
    return -best[0], best[1]


def naive_softmax(z):
    e = [np.exp(v) for v in z]
    s = sum(e)
    return np.array([v / s for v in e])


def central_diff(f, params, eps=1e-5):
    """Finite-difference gradient of scalar ``f()`` w.r.t. each array in ``params``."""
    grads = []
    for arr in params:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + eps
            hi = f()
            arr[idx] = old - eps
            lo = f()
            arr[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        mask = (np.abs(a) > floor) | (np.abs(n) > floor)
        if mask.any():
            err = np.abs(a - n)[mask] / np.maximum(np.abs(a), np.abs(n))[mask]
            worst = max(worst, float(err.max()))
    return worst
