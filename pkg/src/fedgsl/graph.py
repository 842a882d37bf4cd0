"""Immutable CSR graph container with homophily diagnostics and perturbations.

The neighbor lists of node ``u`` live in
``col_indices[row_offsets[u]:row_offsets[u+1]]``, sorted ascending, free of
duplicates and self-loops. Undirected graphs store both directed entries, so
most per-edge statistics count each undirected edge once via the ``u < v``
half of the entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, UndefinedMetricError
from .validation import as_rng, check_mask, require


@dataclass(frozen=True)
class Graph:
    """Sparse graph with dense node features and integer class labels."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    undirected: bool = True

    def __post_init__(self):
        for arr in (self.row_offsets, self.col_indices, self.features, self.labels):
            arr.setflags(write=False)

    @property
    def num_entries(self) -> int:
        """Number of stored directed entries."""
        return int(self.col_indices.shape[0])

    @property
    def num_edges(self) -> int:
        """Undirected edge count (stored entries if the graph is directed)."""
        return self.num_entries // 2 if self.undirected else self.num_entries

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def neighbors(self, u: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[u]:self.row_offsets[u + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def edge_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored directed entries as (sources, targets)."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.out_degrees())
        return src, self.col_indices.copy()

    def undirected_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Each undirected edge once, as (u, v) with u < v."""
        src, dst = self.edge_pairs()
        if not self.undirected:
            return src, dst
        keep = src < dst
        return src[keep], dst[keep]

    def validate(self) -> None:
        """Check the structural invariants; raise InputError on violation."""
        n = self.num_nodes
        off, col = self.row_offsets, self.col_indices
        require(off.shape == (n + 1,) and off[0] == 0, "row_offsets must have length N+1 and start at 0")
        require(bool(np.all(np.diff(off) >= 0)), "row_offsets must be non-decreasing")
        require(int(off[-1]) == col.shape[0], "row_offsets[-1] must equal len(col_indices)")
        if col.size:
            require(int(col.min()) >= 0 and int(col.max()) < n, "col index out of range")
        src, dst = self.edge_pairs()
        require(not np.any(src == dst), "self-loops are not stored")
        for u in range(n):
            row = self.neighbors(u)
            require(bool(np.all(np.diff(row) > 0)), f"row {u} must be sorted and duplicate-free")
        require(self.features.shape[0] == n, "features must have one row per node")
        require(self.labels.shape == (n,), "labels must have length N")
        if n:
            require(int(self.labels.min()) >= 0 and int(self.labels.max()) < self.num_classes,
                    "labels must lie in [0, num_classes)")
        if self.undirected and col.size:
            code = src * n + dst
            rev = dst * n + src
            require(bool(np.all(np.isin(rev, code))), "undirected graph must store both directions")


@dataclass(frozen=True)
class NodeSplit:
    """Disjoint boolean train/val/test masks over a graph's nodes."""

    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = self.train_mask.shape[0]
        check_mask(self.train_mask, n, "train_mask")
        check_mask(self.val_mask, n, "val_mask")
        check_mask(self.test_mask, n, "test_mask")
        overlap = (self.train_mask & self.val_mask) | (self.train_mask & self.test_mask) | (
            self.val_mask & self.test_mask)
        require(not overlap.any(), "split masks must be pairwise disjoint")
        for arr in (self.train_mask, self.val_mask, self.test_mask):
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return int(self.train_mask.shape[0])


def _to_csr(src: np.ndarray, dst: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sort, deduplicate and pack directed entries into CSR arrays."""
    if src.size == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    code = src * np.int64(n) + dst
    code = np.unique(code)
    src_s, dst_s = code // n, code % n
    counts = np.bincount(src_s, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, dst_s.astype(np.int64)


def build_graph(edges, features, labels, undirected: bool = True,
                num_classes: int | None = None) -> Graph:
    """Build a canonical Graph from an edge list, feature matrix and labels.

    Neighbor lists come out sorted and deduplicated; self-loops are dropped
    (the model re-injects ego features through its readout). Undirected graphs
    are symmetrized.
    """
    try:
        feat = np.asarray(features, dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"features rows must all have the same length: {exc}") from None
    if feat.ndim != 2:
        raise InputError("features must be a 2-D matrix with one row per node")
    lab = np.asarray(labels, dtype=np.int64)
    n = feat.shape[0]
    require(lab.shape == (n,), f"labels must have length {n}, got {lab.shape}")
    if num_classes is None:
        num_classes = int(lab.max()) + 1 if n else 1
    if n:
        require(int(lab.min()) >= 0 and int(lab.max()) < num_classes,
                "labels must lie in [0, num_classes)")

    edge_arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if edge_arr.size:
        if int(edge_arr.min()) < 0 or int(edge_arr.max()) >= n:
            raise InputError(f"edge endpoint out of range [0, {n})")
    src, dst = edge_arr[:, 0], edge_arr[:, 1]
    keep = src != dst
    src, dst = src[keep], dst[keep]
    if undirected:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    offsets, cols = _to_csr(src, dst, n)
    return Graph(n, offsets, cols, feat, lab, num_classes, undirected)


def edge_homophily(g: Graph) -> float:
    """Fraction of edges joining same-class endpoints, each edge counted once."""
    src, dst = g.undirected_pairs()
    if src.size == 0:
        raise UndefinedMetricError("edge homophily is undefined for a graph with no edges")
    same = g.labels[src] == g.labels[dst]
    return float(same.sum() / src.size)


def neighbor_label_distribution(g: Graph) -> np.ndarray:
    """Row-stochastic C x C matrix of class-to-class edge fractions.

    Entry (i, j) is the fraction of stored directed entries leaving class-i
    nodes that end at class-j nodes. Classes with zero out-edges get an
    all-zero row.
    """
    c = g.num_classes
    src, dst = g.edge_pairs()
    counts = np.zeros((c, c), dtype=np.float64)
    np.add.at(counts, (g.labels[src], g.labels[dst]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    out = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return out


def flip_edge_noise(g: Graph, p: float, seed) -> Graph:
    """Remove each undirected edge with probability ``p`` and insert one
    uniformly random replacement pair per removal.

    Replacement pairs are drawn from pairs absent from the evolving edge set,
    so the edge count is preserved exactly. Deterministic given ``seed``.
    """
    require(0.0 <= p <= 1.0, "flip probability must lie in [0, 1]")
    require(g.undirected, "edge flipping is defined for undirected graphs")
    if p == 0.0:
        return g
    rng = as_rng(seed)
    u, v = g.undirected_pairs()
    removed = rng.random(u.size) < p
    kept_codes = set((u[~removed] * np.int64(g.num_nodes) + v[~removed]).tolist())
    n_insert = int(removed.sum())

    n = g.num_nodes
    inserted: list[int] = []
    while len(inserted) < n_insert:
        cand = rng.integers(0, n, size=(max(4 * (n_insert - len(inserted)), 16), 2))
        for a, b in cand:
            if a == b:
                continue
            lo, hi = (int(a), int(b)) if a < b else (int(b), int(a))
            code = lo * n + hi
            if code in kept_codes:
                continue
            kept_codes.add(code)
            inserted.append(code)
            if len(inserted) >= n_insert:
                break
    codes = np.fromiter(kept_codes, dtype=np.int64, count=len(kept_codes))
    uu, vv = codes // n, codes % n
    return build_graph(np.stack([uu, vv], axis=1), g.features, g.labels,
                       undirected=True, num_classes=g.num_classes)


def induced_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Subgraph over ``nodes`` with contiguous relabeled ids.

    Returns the subgraph and the id mapping ``node_ids`` with
    ``node_ids[new] == old``. Edges with exactly one endpoint inside are
    dropped.
    """
    node_ids = np.unique(np.asarray(list(nodes), dtype=np.int64))
    require(node_ids.size > 0, "induced_subgraph needs a non-empty node set")
    require(int(node_ids.min()) >= 0 and int(node_ids.max()) < g.num_nodes,
            "node ids out of range")
    new_of = np.full(g.num_nodes, -1, dtype=np.int64)
    new_of[node_ids] = np.arange(node_ids.size)
    src, dst = g.edge_pairs()
    inside = (new_of[src] >= 0) & (new_of[dst] >= 0)
    offsets, cols = _to_csr(new_of[src[inside]], new_of[dst[inside]], node_ids.size)
    sub = Graph(int(node_ids.size), offsets, cols,
                g.features[node_ids].copy(), g.labels[node_ids].copy(),
                g.num_classes, g.undirected)
    return sub, node_ids
