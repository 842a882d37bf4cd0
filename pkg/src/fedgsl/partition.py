"""Split one graph into per-client subgraphs.

Two partitioners: seeded Louvain modularity maximization (one client per
final community, with small communities randomly merged into large ones) and
a balanced multi-source-BFS partitioner with greedy cut refinement. The
balanced partitioner is a stand-in for METIS-style even splits and is never
labeled METIS in any output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .exceptions import InputError
from .graph import Graph, NodeSplit, induced_subgraph
from .validation import as_rng, derived_rng, require

_MODULARITY_TOL = 1e-7


@dataclass(frozen=True)
class PartitionAssignment:
    """Node -> client mapping with clients labeled 0..num_clients-1."""

    client_of: np.ndarray
    num_clients: int

    def __post_init__(self):
        self.client_of.setflags(write=False)
        counts = np.bincount(self.client_of, minlength=self.num_clients)
        require(self.num_clients >= 1 and len(counts) == self.num_clients,
                "client ids must be compact 0..num_clients-1")
        require(bool(np.all(counts >= 1)), "every client needs at least one node")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.client_of, minlength=self.num_clients)


def _compact(raw_labels: np.ndarray) -> PartitionAssignment:
    """Relabel arbitrary community ids to 0..K-1 in order of first appearance."""
    _, first = np.unique(raw_labels, return_index=True)
    order = raw_labels[np.sort(first)]
    remap = {int(c): i for i, c in enumerate(order)}
    out = np.array([remap[int(c)] for c in raw_labels], dtype=np.int64)
    return PartitionAssignment(out, len(remap))


# ---------------------------------------------------------------------------
# Louvain
# ---------------------------------------------------------------------------

class _WeightedGraph:
    """Mutable weighted symmetric graph used during coarsening."""

    def __init__(self, n, adj, loop_weight):
        self.n = n
        self.adj = adj                  # list of dict neighbor -> weight (no self)
        self.loop_weight = loop_weight  # counted twice in a node's degree
        self.degree = np.array([sum(a.values()) for a in adj]) + loop_weight
        self.total = float(self.degree.sum())  # == 2m

    @classmethod
    def from_graph(cls, g: Graph):
        adj = [dict() for _ in range(g.num_nodes)]
        src, dst = g.edge_pairs()
        for u, v in zip(src.tolist(), dst.tolist()):
            adj[u][v] = adj[u].get(v, 0.0) + 1.0
        return cls(g.num_nodes, adj, np.zeros(g.num_nodes))


def modularity(wg: _WeightedGraph, community: np.ndarray) -> float:
    comms = np.unique(community)
    q = 0.0
    two_m = wg.total
    for c in comms:
        members = np.flatnonzero(community == c)
        inside = float(wg.loop_weight[members].sum())
        member_set = set(members.tolist())
        for u in members.tolist():
            for v, w in wg.adj[u].items():
                if v in member_set:
                    inside += w
        tot = float(wg.degree[members].sum())
        q += inside / two_m - (tot / two_m) ** 2
    return q


def graph_modularity(g: Graph, assignment: np.ndarray) -> float:
    """Modularity of a node partition of an unweighted undirected graph."""
    return modularity(_WeightedGraph.from_graph(g), np.asarray(assignment))


def _local_moves(wg: _WeightedGraph, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    community = np.arange(wg.n, dtype=np.int64)
    comm_tot = wg.degree.astype(np.float64).copy()
    order = rng.permutation(wg.n)
    two_m = wg.total
    moved_any = False
    improved = True
    while improved:
        improved = False
        for u in order.tolist():
            cu = int(community[u])
            k_u = float(wg.degree[u])
            links: dict[int, float] = {}
            for v, w in wg.adj[u].items():
                links[int(community[v])] = links.get(int(community[v]), 0.0) + w
            comm_tot[cu] -= k_u
            base = links.get(cu, 0.0) / two_m * 2.0 - comm_tot[cu] * k_u / (two_m * two_m) * 2.0
            best_c, best_gain = cu, base
            for c, k_in in sorted(links.items()):
                if c == cu:
                    continue
                gain = k_in / two_m * 2.0 - comm_tot[c] * k_u / (two_m * two_m) * 2.0
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            comm_tot[best_c] += k_u
            if best_c != cu:
                community[u] = best_c
                improved = True
                moved_any = True
    return community, moved_any


def _coarsen(wg: _WeightedGraph, community: np.ndarray) -> tuple[_WeightedGraph, np.ndarray]:
    comms, node_of = np.unique(community, return_inverse=True)
    k = len(comms)
    adj = [dict() for _ in range(k)]
    loops = np.zeros(k)
    for u in range(wg.n):
        cu = int(node_of[u])
        loops[cu] += wg.loop_weight[u]
        for v, w in wg.adj[u].items():
            cv = int(node_of[v])
            if cu == cv:
                loops[cu] += w  # both directions of an intra edge land here
            else:
                adj[cu][cv] = adj[cu].get(cv, 0.0) + w
    return _WeightedGraph(k, adj, loops), node_of.astype(np.int64)


def louvain(g: Graph, seed) -> PartitionAssignment:
    """Modularity-maximizing communities: local moves plus graph coarsening.

    Deterministic given the seed (node visit order is the only randomness).
    """
    require(g.undirected, "louvain expects an undirected graph")
    require(g.num_edges >= 1, "louvain needs at least one edge")
    rng = as_rng(seed)
    wg = _WeightedGraph.from_graph(g)
    # mapping[original node] == coarse node currently containing it
    mapping = np.arange(g.num_nodes, dtype=np.int64)
    best_q = modularity(wg, np.arange(wg.n))
    while True:
        community, moved = _local_moves(wg, rng)
        if not moved:
            break
        wg, node_of = _coarsen(wg, community)
        mapping = node_of[mapping]
        q = modularity(wg, np.arange(wg.n))
        if q - best_q < _MODULARITY_TOL:
            best_q = max(best_q, q)
            break
        best_q = q
    return _compact(mapping)


def merge_small_communities(g: Graph, pa: PartitionAssignment, min_size: int,
                            seed) -> PartitionAssignment:
    """Merge every community below ``min_size`` whole into a random large one."""
    del g  # merging is random, not locality-aware
    rng = as_rng(seed)
    sizes = pa.sizes()
    large = np.flatnonzero(sizes >= min_size)
    if large.size == 0:
        raise InputError(f"no community reaches min_size={min_size} "
                         f"(largest has {int(sizes.max())} nodes); lower min_size")
    relabel = np.arange(pa.num_clients, dtype=np.int64)
    for c in np.flatnonzero(sizes < min_size).tolist():
        relabel[c] = int(rng.choice(large))
    return _compact(relabel[pa.client_of])


# ---------------------------------------------------------------------------
# balanced partition (METIS substitute)
# ---------------------------------------------------------------------------

def cut_size(g: Graph, client_of: np.ndarray) -> int:
    """Number of undirected edges crossing between parts."""
    src, dst = g.undirected_pairs()
    return int(np.sum(client_of[src] != client_of[dst]))


def _balance_ok(size: int, target: float, tol: int) -> bool:
    return size >= 1 and abs(size - target) <= tol


def balanced_partition(g: Graph, m: int, seed) -> PartitionAssignment:
    """m near-equal parts grown by seeded multi-source BFS, then refined.

    Part sizes stay within ceil(0.05 * N/m) of N/m; the greedy refinement
    only ever accepts strict cut reductions.
    """
    n = g.num_nodes
    require(1 <= m <= n, f"need 1 <= m <= num_nodes, got m={m}, N={n}")
    rng = as_rng(seed)
    target = n / m
    tol = int(np.ceil(0.05 * target))
    quota = np.full(m, n // m, dtype=np.int64)
    quota[: n % m] += 1

    part = np.full(n, -1, dtype=np.int64)
    size = np.zeros(m, dtype=np.int64)
    seeds = rng.choice(n, size=m, replace=False)
    queues: list[list[int]] = [[] for _ in range(m)]
    for p, s in enumerate(seeds.tolist()):
        if part[s] == -1:
            part[s] = p
            size[p] += 1
            queues[p].extend(g.neighbors(s).tolist())

    remaining = n - int(size.sum())
    while remaining > 0:
        progressed = False
        for p in np.argsort(size, kind="stable").tolist():
            if size[p] >= quota[p]:
                continue
            picked = -1
            q = queues[p]
            while q:
                cand = q.pop(0)
                if part[cand] == -1:
                    picked = cand
                    break
            if picked == -1:
                unassigned = np.flatnonzero(part == -1)
                if unassigned.size == 0:
                    break
                picked = int(unassigned[0])
            part[picked] = p
            size[p] += 1
            remaining -= 1
            queues[p].extend(g.neighbors(picked).tolist())
            progressed = True
            if remaining == 0:
                break
        if not progressed:
            break

    # greedy boundary refinement; strict improvements only
    for _ in range(20):
        moved = False
        for u in rng.permutation(n).tolist():
            pu = int(part[u])
            neigh = g.neighbors(u)
            if neigh.size == 0:
                continue
            counts = np.bincount(part[neigh], minlength=m)
            best_p, best_delta = pu, 0
            for p in np.flatnonzero(counts).tolist():
                if p == pu:
                    continue
                delta = int(counts[p] - counts[pu])  # cut reduction when moving u -> p
                if delta > best_delta and _balance_ok(size[pu] - 1, target, tol) \
                        and _balance_ok(size[p] + 1, target, tol):
                    best_p, best_delta = p, delta
            if best_p != pu:
                size[pu] -= 1
                size[best_p] += 1
                part[u] = best_p
                moved = True
        if not moved:
            break
    return PartitionAssignment(part, m)


# ---------------------------------------------------------------------------
# federated dataset assembly
# ---------------------------------------------------------------------------

def five_group_split(n: int, rng: np.random.Generator) -> NodeSplit:
    """Random split into 5 groups: 3 train, 1 validation, 1 test."""
    require(n >= 5, f"need at least 5 nodes for a 5-group split, got {n}")
    groups = np.array_split(rng.permutation(n), 5)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for gix in groups[:3]:
        train[gix] = True
    val[groups[3]] = True
    test[groups[4]] = True
    return NodeSplit(train, val, test)


def make_federated_dataset(g: Graph, pa: PartitionAssignment,
                           seed) -> list[tuple[Graph, NodeSplit]]:
    """Induce each client's subgraph and attach a seeded 5-group node split."""
    out = []
    for client in range(pa.num_clients):
        nodes = np.flatnonzero(pa.client_of == client)
        if nodes.size < 5:
            raise InputError(f"client {client} has only {nodes.size} nodes; "
                             "need at least 5 for the 5-group split")
        sub, _ = induced_subgraph(g, nodes)
        split = five_group_split(sub.num_nodes, derived_rng(seed, client))
        out.append((sub, split))
    return out


# ---------------------------------------------------------------------------
# estimator wrappers
# ---------------------------------------------------------------------------

class LouvainPartitioner(ClusterMixin, BaseEstimator):
    """Louvain communities with small ones merged away, as a clusterer.

    ``fit_predict(graph)`` returns the client id per node; the realized client
    count lands in ``n_clients_``.
    """

    def __init__(self, min_size: int = 50, random_state: int = 0):
        self.min_size = min_size
        self.random_state = random_state

    def fit(self, X: Graph, y=None):
        pa = louvain(X, self.random_state)
        pa = merge_small_communities(X, pa, self.min_size, self.random_state)
        self.labels_ = pa.client_of
        self.n_clients_ = pa.num_clients
        return self


class BalancedPartitioner(ClusterMixin, BaseEstimator):
    """Even-size partitioner (METIS substitute), as a clusterer."""

    def __init__(self, n_clients: int = 4, random_state: int = 0):
        self.n_clients = n_clients
        self.random_state = random_state

    def fit(self, X: Graph, y=None):
        pa = balanced_partition(X, self.n_clients, self.random_state)
        self.labels_ = pa.client_of
        self.n_clients_ = pa.num_clients
        return self
