"""Seeded synthetic heterophilic graphs with controllable homophily.

The generator plants balanced classes, gives every node the same expected
degree, and samples each edge endpoint's class from a row-stochastic mixing
matrix (diagonal = target homophily). Per-client rotated mixing matrices
manufacture the cross-client neighbor-distribution conflict: nodes of the
same class connect to systematically different classes on different clients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InputError
from .graph import Graph, build_graph
from .validation import derived_rng, require

_MAX_RESAMPLE_ROUNDS = 50


@dataclass(frozen=True)
class GeneratorConfig:
    num_nodes: int = 1000
    num_classes: int = 5
    target_homophily: float = 0.2
    mean_degree: float = 10.0
    feature_dim: int = 16
    feature_separation: float = 1.0
    class_mixing: np.ndarray | None = None
    seed: int = 0

    def validate(self) -> None:
        require(self.num_nodes >= 1, "num_nodes must be >= 1")
        require(self.num_classes >= 1, "num_classes must be >= 1")
        require(0.0 <= self.target_homophily <= 1.0, "target_homophily must lie in [0, 1]")
        require(self.mean_degree >= 1.0, "mean_degree must be >= 1")
        if self.mean_degree >= self.num_nodes:
            raise InputError(f"mean_degree {self.mean_degree} is infeasible for "
                             f"{self.num_nodes} nodes")
        require(self.feature_dim >= self.num_classes,
                "feature_dim must be >= num_classes (class means sit on simplex corners)")
        if self.class_mixing is not None:
            mix = np.asarray(self.class_mixing, dtype=np.float64)
            c = self.num_classes
            require(mix.shape == (c, c), f"class_mixing must be {c}x{c}")
            require(bool(np.all(np.abs(mix.sum(axis=1) - 1.0) <= 1e-9)),
                    "class_mixing rows must sum to 1")
            require(bool(np.all(mix >= 0)), "class_mixing must be non-negative")


def default_mixing(num_classes: int, homophily: float) -> np.ndarray:
    """Homophily h on the diagonal, (1-h)/(C-1) spread off-diagonal."""
    c = num_classes
    if c == 1:
        return np.ones((1, 1))
    off = (1.0 - homophily) / (c - 1)
    mix = np.full((c, c), off)
    np.fill_diagonal(mix, homophily)
    return mix


def conflicting_mixing(cfg: GeneratorConfig, num_clients: int,
                       conflict_strength: float) -> list[np.ndarray]:
    """Per-client mixing matrices with rotated off-diagonal mass.

    Client i concentrates each class's off-diagonal mass on the class shifted
    by 1 + (i mod (C-1)) positions, interpolated with the shared default by
    ``conflict_strength`` (0 = identical across clients, 1 = fully rotated).
    """
    require(num_clients >= 2, "conflict generation needs at least 2 clients")
    require(cfg.num_classes >= 2, "conflict generation needs at least 2 classes")
    require(0.0 <= conflict_strength <= 1.0, "conflict_strength must lie in [0, 1]")
    c = cfg.num_classes
    h = cfg.target_homophily
    base = default_mixing(c, h)
    out = []
    for i in range(num_clients):
        shift = 1 + (i % (c - 1))
        concentrated = np.zeros((c, c))
        for cls in range(c):
            concentrated[cls, cls] = h
            concentrated[cls, (cls + shift) % c] += 1.0 - h
        out.append((1.0 - conflict_strength) * base + conflict_strength * concentrated)
    return out


def _class_sizes(n: int, c: int) -> np.ndarray:
    sizes = np.full(c, n // c, dtype=np.int64)
    sizes[: n % c] += 1
    return sizes


def _class_means(c: int, dim: int, separation: float) -> np.ndarray:
    # scaled one-hot corners: pairwise distance separation exactly
    means = np.zeros((c, dim))
    for cls in range(c):
        means[cls, cls] = separation / np.sqrt(2.0)
    return means


def generate_graph(cfg: GeneratorConfig) -> Graph:
    """Sample one undirected graph with the configured homophily and degree.

    Each node draws ~mean_degree/2 undirected edges whose endpoint class comes
    from its mixing row; duplicate/self draws are resampled a bounded number
    of times. Features are unit-variance Gaussian blobs around equidistant
    class means. Deterministic given the seed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.num_nodes, cfg.num_classes
    sizes = _class_sizes(n, c)
    labels = np.repeat(np.arange(c, dtype=np.int64), sizes)
    members = [np.flatnonzero(labels == cls) for cls in range(c)]
    mixing = (np.asarray(cfg.class_mixing, dtype=np.float64)
              if cfg.class_mixing is not None else default_mixing(c, cfg.target_homophily))

    half = cfg.mean_degree / 2.0
    draws = np.full(n, int(half), dtype=np.int64)
    frac = half - int(half)
    if frac > 0:
        draws += rng.random(n) < frac

    pending = np.repeat(np.arange(n, dtype=np.int64), draws)
    codes: set[int] = set()
    for _ in range(_MAX_RESAMPLE_ROUNDS):
        if pending.size == 0:
            break
        target_cls = np.empty(pending.size, dtype=np.int64)
        for cls in range(c):
            at = np.flatnonzero(labels[pending] == cls)
            if at.size:
                target_cls[at] = rng.choice(c, size=at.size, p=mixing[cls])
        targets = np.empty(pending.size, dtype=np.int64)
        for cls in range(c):
            at = np.flatnonzero(target_cls == cls)
            if at.size:
                targets[at] = members[cls][rng.integers(0, members[cls].size, size=at.size)]
        lo = np.minimum(pending, targets)
        hi = np.maximum(pending, targets)
        cand = lo * np.int64(n) + hi
        ok = pending != targets
        # first occurrence within the batch wins; later duplicates retry
        _, first = np.unique(cand, return_index=True)
        dup = np.ones(pending.size, dtype=bool)
        dup[first] = False
        ok &= ~dup
        for i in np.flatnonzero(ok):
            if int(cand[i]) in codes:
                ok[i] = False
            else:
                codes.add(int(cand[i]))
        pending = pending[~ok]

    arr = np.fromiter(codes, dtype=np.int64, count=len(codes))
    edges = np.stack([arr // n, arr % n], axis=1) if arr.size else np.zeros((0, 2), np.int64)
    means = _class_means(c, cfg.feature_dim, cfg.feature_separation)
    features = means[labels] + rng.standard_normal((n, cfg.feature_dim))
    return build_graph(edges, features, labels, undirected=True, num_classes=c)


def generate_conflicting_clients(cfg: GeneratorConfig, num_clients: int,
                                 conflict_strength: float) -> list[Graph]:
    """Generate per-client graphs that share features but disagree on mixing.

    All clients use the same class set, class balance and feature blobs; only
    the mixing matrices differ (see :func:`conflicting_mixing`). Client seeds
    derive from (cfg.seed, client index).
    """
    if cfg.class_mixing is not None:
        raise InputError("conflict generation derives its own mixing matrices; "
                         "leave class_mixing unset")
    mixings = conflicting_mixing(cfg, num_clients, conflict_strength)
    graphs = []
    for i, mix in enumerate(mixings):
        child_seed = derived_rng(cfg.seed, i).integers(0, 2 ** 63 - 1)
        graphs.append(generate_graph(replace(cfg, class_mixing=mix, seed=int(child_seed))))
    return graphs
