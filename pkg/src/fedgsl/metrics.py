"""Accuracy, rank-based AUC, the link-inference attack, and client divergence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import InputError, UndefinedMetricError
from .graph import Graph
from .validation import as_rng, check_mask


def accuracy(logits, labels, mask) -> float:
    """Fraction of masked nodes whose argmax logit matches the label.

    Argmax ties resolve to the smallest class id.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    mask = check_mask(np.asarray(mask), logits.shape[0])
    if not mask.any():
        raise InputError("accuracy needs a non-empty mask")
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


def binary_auc(scores, labels, mask) -> float:
    """Probability a random positive outscores a random negative; ties count half.

    Computed from average ranks (the Mann-Whitney statistic), which applies
    the usual tie correction.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    mask = check_mask(np.asarray(mask), scores.shape[0])
    s, y = scores[mask], labels[mask]
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("binary_auc needs both classes present in the mask")
    ranks = rankdata(s, method="average")
    r_pos = float(ranks[y == 1].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def link_inference_attack(embeddings, g: Graph, num_pairs: int, seed) -> float:
    """Balanced accuracy of a cosine-threshold edge predictor.

    Samples ``num_pairs`` true edges and as many uniform non-edges, predicts
    "edge" when a pair's embedding cosine exceeds the median similarity of the
    whole sample (ties predict "non-edge"), and reports
    (TPR + TNR) / 2. A score near 0.5 means the embeddings leak no structure.
    """
    emb = np.asarray(getattr(embeddings, "values", embeddings), dtype=np.float64)
    rng = as_rng(seed)
    src, dst = g.undirected_pairs()
    if src.size < num_pairs:
        raise InputError(f"graph has {src.size} edges, need at least {num_pairs}")
    pick = rng.choice(src.size, size=num_pairs, replace=False)
    pos = np.stack([src[pick], dst[pick]], axis=1)

    n = g.num_nodes
    edge_codes = set((src * np.int64(n) + dst).tolist())
    neg = []
    while len(neg) < num_pairs:
        cand = rng.integers(0, n, size=(4 * num_pairs, 2))
        for a, b in cand:
            if a == b:
                continue
            lo, hi = (int(a), int(b)) if a < b else (int(b), int(a))
            if lo * n + hi in edge_codes:
                continue
            neg.append((lo, hi))
            if len(neg) >= num_pairs:
                break
    neg = np.asarray(neg, dtype=np.int64)

    def cosines(pairs):
        a, b = emb[pairs[:, 0]], emb[pairs[:, 1]]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na * nb
        dots = np.sum(a * b, axis=1)
        return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)

    sim_pos = cosines(pos)
    sim_neg = cosines(neg)
    threshold = float(np.median(np.concatenate([sim_pos, sim_neg])))
    tpr = float(np.mean(sim_pos > threshold))
    tnr = float(np.mean(sim_neg <= threshold))
    return (tpr + tnr) / 2.0


def client_divergence(distributions: list[np.ndarray]) -> np.ndarray:
    """Pairwise Frobenius distances between neighbor-label distributions."""
    mats = [np.asarray(d, dtype=np.float64) for d in distributions]
    shape = mats[0].shape
    for d in mats:
        if d.shape != shape:
            raise InputError(f"all distributions must share a class count; "
                             f"got {d.shape} vs {shape}")
    m = len(mats)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            dist = float(np.linalg.norm(mats[i] - mats[j]))
            out[i, j] = out[j, i] = dist
    return out


@dataclass
class EvalReport:
    """Cross-client evaluation summary."""

    client_accuracy: list[float]
    mean_accuracy: float
    client_auc: list[float] | None = None
    mean_auc: float | None = None
    lia_accuracy: float | None = None
    homophily: list[float] = field(default_factory=list)
    divergence: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "client_accuracy": self.client_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "homophily": self.homophily,
        }
        if self.client_auc is not None:
            out["client_auc"] = self.client_auc
            out["mean_auc"] = self.mean_auc
        if self.lia_accuracy is not None:
            out["lia_accuracy"] = self.lia_accuracy
        if self.divergence is not None:
            out["divergence"] = self.divergence.tolist()
        return out
