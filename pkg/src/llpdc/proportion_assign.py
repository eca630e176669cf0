"""Proportion-constrained hard pseudo-labels for one bag.

A bag of ``m`` instances with class counts ``n_1..n_l`` (summing to ``m``)
is turned into a layered network::

    source -> instance_j   (capacity 1, cost 0)
    instance_j -> label_y  (capacity 1, cost round(-log p_jy * 1e6))
    label_y -> sink        (capacity n_y, cost 0)

A minimum-cost maximum flow saturates every instance once and every label
exactly ``n_y`` times, so its instance->label edges carry the maximum
posterior labelling among all labellings with that histogram.

Class indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mincost_flow import FlowNetwork, solve_mcmf

__all__ = [
    "PROB_FLOOR",
    "COST_SCALE",
    "AssignmentResult",
    "AssignmentError",
    "check_proportions",
    "counts_from_proportions",
    "quantize_costs",
    "build_assignment_network",
    "assign_pseudo_labels",
    "enumerate_optimal",
    "count_candidates",
]

PROB_FLOOR = 1e-12
COST_SCALE = 10**6
MAX_CANDIDATES = 10**6


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AssignmentResult:
    labels: np.ndarray
    total_neg_log_prob: float
    per_instance_prob: np.ndarray
    # Objective actually minimised: sum of quantised edge costs.
    quantized_cost: int

    def histogram(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes)


def check_proportions(alpha, atol: float = 1e-9) -> np.ndarray:
    """Validate a proportion vector and return it as a float array."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] < 2:
        raise AssignmentError("proportion vector needs at least 2 classes")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise AssignmentError("proportions must be finite and non-negative")
    if abs(a.sum() - 1.0) > atol:
        raise AssignmentError(f"proportions sum to {a.sum():.12g}, not 1")
    return a


def counts_from_proportions(alpha, m: int) -> np.ndarray:
    """Integer class counts for a bag of size ``m``.

    Exact when every ``m * alpha_k`` is integral; otherwise largest-remainder
    rounding, equal remainders going to the lower class index first.
    """
    if m <= 0:
        raise AssignmentError("bag size must be positive")
    a = check_proportions(alpha)
    products = m * a
    nearest = np.rint(products)
    if np.all(np.abs(products - nearest) <= 1e-9):
        counts = nearest.astype(np.int64)
        if counts.sum() == m:
            return counts
    floors = np.floor(products + 1e-9).astype(np.int64)
    remainders = products - floors
    short = m - int(floors.sum())
    # Stable sort on -remainder keeps lower indices first among ties.
    order = np.argsort(-remainders, kind="stable")
    floors[order[:short]] += 1
    return floors


def _check_inputs(P, counts) -> tuple[np.ndarray, np.ndarray]:
    P = np.asarray(P, dtype=np.float64)
    counts = np.asarray(counts)
    if P.ndim != 2:
        raise AssignmentError("probability matrix must be 2-D")
    if counts.ndim != 1 or not np.issubdtype(counts.dtype, np.integer):
        raise AssignmentError("class counts must be a 1-D integer vector")
    m, l = P.shape
    if counts.shape[0] != l:
        raise AssignmentError(f"probability matrix has {l} columns but {counts.shape[0]} class counts")
    if np.any(counts < 0) or int(counts.sum()) != m:
        raise AssignmentError(f"class counts {counts.tolist()} do not sum to bag size {m}")
    if not np.all(np.isfinite(P)):
        raise AssignmentError("probability matrix has non-finite entries")
    return P, counts.astype(np.int64)


def quantize_costs(P) -> np.ndarray:
    """Integer edge costs ``round(-log p * 1e6)`` with ``p`` clamped to [1e-12, 1]."""
    p = np.clip(np.asarray(P, dtype=np.float64), PROB_FLOOR, 1.0)
    return np.rint(-np.log(p) * COST_SCALE).astype(np.int64)


def build_assignment_network(P, counts) -> FlowNetwork:
    """Layered flow network for one bag.

    Node ids: 0 is the source, ``1..m`` the instances, ``m+1..m+l`` the
    labels and ``m+l+1`` the sink. Edges are inserted source edges first,
    then instance->label edges in row-major order, then label->sink edges.
    """
    P, counts = _check_inputs(P, counts)
    m, l = P.shape
    cost = quantize_costs(P)
    sink = m + l + 1
    inst = np.arange(1, m + 1, dtype=np.int64)
    lab = np.arange(m + 1, m + l + 1, dtype=np.int64)

    tails = np.concatenate([np.zeros(m, np.int64), np.repeat(inst, l), lab])
    heads = np.concatenate([inst, np.tile(lab, m), np.full(l, sink, np.int64)])
    caps = np.concatenate([np.ones(m, np.int64), np.ones(m * l, np.int64), counts])
    costs = np.concatenate([np.zeros(m, np.int64), cost.ravel(), np.zeros(l, np.int64)])
    return FlowNetwork(
        node_count=m + l + 2,
        tails=tails,
        heads=heads,
        capacities=caps,
        costs=costs,
        source=0,
        sink=sink,
    )


def _label_potentials(cost: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Dual prices of the label nodes for an optimal labelling.

    Shortest distances in the label exchange graph, where moving one
    instance ``k`` from label ``a`` to ``b`` costs ``cost[k, b] - cost[k, a]``.
    Values are integers held in float64 (exact below 2**53).
    """
    m, l = cost.shape
    c = cost.astype(np.float64)
    w = np.full((l, l), np.inf)
    own = c[np.arange(m), labels]
    delta = c - own[:, None]
    for a in range(l):
        rows = labels == a
        if rows.any():
            w[a] = delta[rows].min(axis=0)
    np.fill_diagonal(w, 0.0)
    phi = np.zeros(l)
    for _ in range(l):
        nxt = np.minimum(phi, (phi[:, None] + w).min(axis=0))
        if np.array_equal(nxt, phi):
            break
        phi = nxt
    return phi


def _exchange_path(tight, labels, first, target, lo):
    """BFS over labels from ``first`` to ``target`` through instances >= ``lo``.

    ``tight[k]`` lists the labels instance ``k`` can move to at zero
    reduced cost. Returns the list of ``(instance, new_label)`` moves or
    ``None``.
    """
    parent: dict[int, tuple[int, int]] = {first: (-1, -1)}
    frontier = [first]
    free = np.arange(lo, labels.shape[0])
    while frontier:
        nxt = []
        for a in frontier:
            members = free[labels[lo:] == a]
            for k in members:
                for b in tight[k]:
                    if b == a or b in parent:
                        continue
                    parent[b] = (a, int(k))
                    if b == target:
                        moves = []
                        while b != first:
                            a_prev, k_prev = parent[b]
                            moves.append((k_prev, b))
                            b = a_prev
                        return moves
                    nxt.append(b)
        frontier = nxt
    return None


def _canonicalize(cost: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Lexicographically smallest labelling among those of equal minimal cost.

    Any two optimal labellings differ by cycles of zero reduced cost, so a
    greedy pass that lowers each instance's label in turn, rotating along
    such a cycle through later instances only, reaches the lexicographic
    minimum. Lower instance index gets the lower class index first.
    """
    m, l = cost.shape
    phi = _label_potentials(cost, labels)
    c = cost.astype(np.float64)
    reduced = c - phi[None, :] - (c[np.arange(m), labels] - phi[labels])[:, None]
    if reduced.min() < 0:
        raise AssertionError("flow labelling is not optimal")
    tight = reduced == 0
    if int(tight.sum()) == m:
        return labels
    labels = labels.copy()
    adjacency = [np.flatnonzero(row).tolist() for row in tight]
    for j in range(m):
        cur = int(labels[j])
        for y in adjacency[j]:
            if y >= cur:
                break
            moves = _exchange_path(adjacency, labels, y, cur, j + 1)
            if moves is not None:
                for k, b in moves:
                    labels[k] = b
                labels[j] = y
                break
    return labels


def _result(P: np.ndarray, cost: np.ndarray, labels: np.ndarray) -> AssignmentResult:
    rows = np.arange(P.shape[0])
    probs = P[rows, labels]
    nll = float(-np.log(np.clip(probs, PROB_FLOOR, 1.0)).sum())
    return AssignmentResult(
        labels=labels.astype(np.int64),
        total_neg_log_prob=nll,
        per_instance_prob=probs.copy(),
        quantized_cost=int(cost[rows, labels].sum()),
    )


def assign_pseudo_labels(P, counts) -> AssignmentResult:
    """Maximum-posterior labelling of a bag whose histogram equals ``counts``.

    Solved as a minimum-cost maximum flow. Entries below 1e-12 are clamped,
    never rejected. Exact cost ties resolve to the lexicographically
    smallest label vector.
    """
    P, counts = _check_inputs(P, counts)
    m, l = P.shape
    cost = quantize_costs(P)
    network = build_assignment_network(P, counts)
    flow = solve_mcmf(network)
    if flow.total_flow != m:
        raise AssertionError(f"assignment flow {flow.total_flow} != bag size {m}")
    used = flow.flow_per_edge[m : m + m * l].reshape(m, l)
    labels = used.argmax(axis=1)
    labels = _canonicalize(cost, labels)
    return _result(P, cost, labels)


def count_candidates(counts) -> int:
    """Number of distinct labellings with the given histogram (a multinomial)."""
    total, out = 0, 1
    for c in counts:
        total += int(c)
        out *= math.comb(total, int(c))
    return out


def enumerate_optimal(P, counts, max_candidates: int = MAX_CANDIDATES) -> AssignmentResult:
    """Brute-force argmin of the quantised cost over every labelling.

    Candidates are visited in lexicographic order and only a strictly
    smaller cost replaces the incumbent, which gives the same tie-break as
    :func:`assign_pseudo_labels`.
    """
    P, counts = _check_inputs(P, counts)
    n_cand = count_candidates(counts)
    if n_cand > max_candidates:
        raise AssignmentError(
            f"{n_cand} candidate labellings exceed the enumeration guard "
            f"({max_candidates}); use assign_pseudo_labels instead"
        )
    m, l = P.shape
    cost = quantize_costs(P).tolist()
    remaining = [int(c) for c in counts]
    current = [0] * m
    best: list = [None, None]

    def visit(j: int, acc: int) -> None:
        if j == m:
            if best[0] is None or acc < best[0]:
                best[0], best[1] = acc, list(current)
            return
        row = cost[j]
        for y in range(l):
            if remaining[y]:
                remaining[y] -= 1
                current[j] = y
                visit(j + 1, acc + row[y])
                remaining[y] += 1

    visit(0, 0)
    return _result(P, np.asarray(cost, dtype=np.int64), np.asarray(best[1], dtype=np.int64))
