"""Exact minimum-cost maximum-flow over integer capacities and costs.

Successive shortest augmenting paths with node potentials. The first
shortest-path pass is label-correcting (Bellman-Ford order) so arbitrary
integer costs are accepted as long as there is no negative-cost cycle;
later passes run Dijkstra on potential-reduced costs, which are
non-negative. The inner loops are compiled with numba.

Ties between equal-length paths are resolved by scanning arcs in
edge-insertion order and keeping the first strict improvement, so the
same network always yields the same ``flow_per_edge``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

__all__ = [
    "FlowNetwork",
    "FlowResult",
    "NetworkError",
    "validate_network",
    "solve_mcmf",
]

# Costs and potentials must stay inside signed 64-bit arithmetic.
COST_LIMIT = 2**62
UNREACHED = np.iinfo(np.int64).max


class NetworkError(ValueError):
    """Raised when a FlowNetwork violates one of its invariants."""


@dataclass(frozen=True)
class FlowNetwork:
    """Directed network with integer capacities and integer unit costs.

    Edges are kept as parallel int64 arrays in insertion order; that order
    is the tie-break order of the solver.
    """

    node_count: int
    tails: np.ndarray
    heads: np.ndarray
    capacities: np.ndarray
    costs: np.ndarray
    source: int
    sink: int

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[Sequence[int]],
        source: int,
        sink: int,
    ) -> "FlowNetwork":
        """Build a network from ``(tail, head, capacity, unit_cost)`` tuples."""
        rows = [tuple(e) for e in edges]
        if any(len(r) != 4 for r in rows):
            raise NetworkError("each edge must be (tail, head, capacity, unit_cost)")
        arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
        return cls(
            node_count=int(node_count),
            tails=arr[:, 0].copy(),
            heads=arr[:, 1].copy(),
            capacities=arr[:, 2].copy(),
            costs=arr[:, 3].copy(),
            source=int(source),
            sink=int(sink),
        )

    @property
    def edge_count(self) -> int:
        return int(self.tails.shape[0])

    @property
    def edges(self) -> list[tuple[int, int, int, int]]:
        return [
            (int(u), int(v), int(c), int(w))
            for u, v, c, w in zip(self.tails, self.heads, self.capacities, self.costs)
        ]


@dataclass(frozen=True)
class FlowResult:
    flow_per_edge: np.ndarray
    total_flow: int
    total_cost: int


def validate_network(network: FlowNetwork) -> str | None:
    """Check every FlowNetwork invariant.

    Returns:
        ``None`` when the network is well formed, otherwise a short
        description of the first violated invariant.
    """
    n = network.node_count
    if n < 1:
        return "node_count must be positive"
    shapes = {
        a.shape for a in (network.tails, network.heads, network.capacities, network.costs)
    }
    if len(shapes) != 1 or network.tails.ndim != 1:
        return "edge arrays have mismatched shapes"
    if not (0 <= network.source < n and 0 <= network.sink < n):
        return "node id out of range"
    if network.source == network.sink:
        return "source equals sink"
    if network.edge_count:
        if (
            network.tails.min() < 0
            or network.heads.min() < 0
            or network.tails.max() >= n
            or network.heads.max() >= n
        ):
            return "node id out of range"
        if np.any(network.tails == network.heads):
            return "self-loop"
        if network.capacities.min() < 0:
            return "negative capacity"
        if _cost_weight(network) >= COST_LIMIT:
            return "cost overflow: capacity-weighted costs exceed 64-bit range"
    return None


def _cost_weight(network: FlowNetwork) -> int:
    """``sum((cap + 1) * |cost|)``, exact."""
    caps = network.capacities.astype(np.float64) + 1.0
    approx = float(caps @ np.abs(network.costs.astype(np.float64)))
    if approx < COST_LIMIT / 4:
        return int(approx)
    # Near the limit: Python ints so the bound itself cannot wrap.
    return sum((int(c) + 1) * abs(int(w)) for c, w in zip(network.capacities, network.costs))


def _residual_arrays(network: FlowNetwork):
    """CSR residual graph. Arc 2e is edge e, arc 2e+1 its reverse.

    Arcs leaving a node are listed in edge-insertion order, which is the
    scan order (and so the tie-break order) of both shortest-path passes.
    """
    m = network.edge_count
    head = np.empty(2 * m, dtype=np.int64)
    tail = np.empty(2 * m, dtype=np.int64)
    cap = np.zeros(2 * m, dtype=np.int64)
    cost = np.empty(2 * m, dtype=np.int64)
    head[0::2], head[1::2] = network.heads, network.tails
    tail[0::2], tail[1::2] = network.tails, network.heads
    cap[0::2] = network.capacities
    cost[0::2], cost[1::2] = network.costs, -network.costs
    order = np.argsort(tail, kind="stable").astype(np.int64)
    start = np.zeros(network.node_count + 1, dtype=np.int64)
    np.cumsum(np.bincount(tail, minlength=network.node_count), out=start[1:])
    return start, order, head, cap, cost


@njit(cache=True)
def _bellman_ford(start, order, head, cap, cost, s, dist, pred):
    n = start.shape[0] - 1
    for v in range(n):
        dist[v] = UNREACHED
        pred[v] = -1
    dist[s] = 0
    for _ in range(n):
        changed = False
        for u in range(n):
            du = dist[u]
            if du == UNREACHED:
                continue
            for k in range(start[u], start[u + 1]):
                a = order[k]
                if cap[a] <= 0:
                    continue
                v = head[a]
                nd = du + cost[a]
                if dist[v] == UNREACHED or nd < dist[v]:
                    dist[v] = nd
                    pred[v] = a
                    changed = True
        if not changed:
            return True
    return False


@njit(cache=True)
def _dijkstra(start, order, head, cap, cost, s, pot, dist, pred, done):
    # Dense O(V^2) selection: among equal distances the lowest node id wins.
    n = start.shape[0] - 1
    for v in range(n):
        dist[v] = UNREACHED
        pred[v] = -1
        done[v] = False
    dist[s] = 0
    for _ in range(n):
        u = -1
        best = UNREACHED
        for v in range(n):
            if not done[v] and dist[v] != UNREACHED and (u < 0 or dist[v] < best):
                u = v
                best = dist[v]
        if u < 0:
            break
        done[u] = True
        pu = pot[u]
        for k in range(start[u], start[u + 1]):
            a = order[k]
            if cap[a] <= 0:
                continue
            v = head[a]
            if done[v]:
                continue
            nd = best + cost[a] + pu - pot[v]
            if dist[v] == UNREACHED or nd < dist[v]:
                dist[v] = nd
                pred[v] = a


@njit(cache=True)
def _ssp(start, order, head, cap, cost, s, t):
    """Augment along shortest paths until the sink is unreachable.

    Returns the total flow, or -1 when a negative cycle is detected.
    """
    n = start.shape[0] - 1
    dist = np.empty(n, dtype=np.int64)
    pred = np.empty(n, dtype=np.int64)
    done = np.empty(n, dtype=np.bool_)
    pot = np.zeros(n, dtype=np.int64)
    if not _bellman_ford(start, order, head, cap, cost, s, dist, pred):
        return -1
    # Nodes unreachable now stay unreachable: new residual arcs only join
    # nodes already on an augmenting path.
    for v in range(n):
        if dist[v] != UNREACHED:
            pot[v] = dist[v]
    total = 0
    while dist[t] != UNREACHED:
        push = UNREACHED
        v = t
        while v != s:
            a = pred[v]
            if cap[a] < push:
                push = cap[a]
            v = head[a ^ 1]
        v = t
        while v != s:
            a = pred[v]
            cap[a] -= push
            cap[a ^ 1] += push
            v = head[a ^ 1]
        total += push
        _dijkstra(start, order, head, cap, cost, s, pot, dist, pred, done)
        for v in range(n):
            if dist[v] != UNREACHED:
                pot[v] += dist[v]
    return total


def solve_mcmf(network: FlowNetwork) -> FlowResult:
    """Maximum s-t flow of minimum total cost.

    An unreachable sink is not an error: the result carries zero flow.

    Raises:
        NetworkError: if the network is malformed or holds a negative-cost
            cycle reachable from the source.
    """
    problem = validate_network(network)
    if problem is not None:
        raise NetworkError(problem)
    if network.edge_count == 0:
        return FlowResult(np.zeros(0, dtype=np.int64), 0, 0)

    start, order, head, cap, cost = _residual_arrays(network)
    total_flow = _ssp(start, order, head, cap, cost, network.source, network.sink)
    if total_flow < 0:
        raise NetworkError("negative-cost cycle with positive capacity")
    flow = cap[1::2].copy()
    total_cost = int(np.dot(flow, network.costs))
    return FlowResult(flow_per_edge=flow, total_flow=int(total_flow), total_cost=total_cost)
