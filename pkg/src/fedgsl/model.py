"""Dual-channel GNN with a shared latent-structure learner.

One model has two message-passing channels fused per layer:

* a local channel convolving over the client's original adjacency, and
* a global channel convolving over a latent graph built each step by scoring
  node-embedding pairs with a multi-head weighted cosine metric and keeping
  the top-k scores per node.

Layer fusion is ``Z_l = relu(alpha * E_l + (1 - alpha) * H_l)`` with ``E``
from the original graph and ``H`` from the latent graph; the readout
concatenates the raw features with every layer output. Parameter blocks are
tagged with the channel ("global" blocks are the ones a federation server may
aggregate; "local" blocks stay private).

The "plain" variant drops the structure learner and global channel entirely
and is the architecture used by the local-only and full-averaging baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import SparseOp, SparsePattern, Tape, Tensor
from .exceptions import InputError, NumericFaultError
from .graph import Graph, NodeSplit
from .metrics import accuracy
from .validation import as_rng, require

GLOBAL_CHANNEL = "global"
LOCAL_CHANNEL = "local"

SPARSIFIERS = ("topk", "bernoulli", "topk_binary")


@dataclass(frozen=True)
class Hyperparams:
    """Model and training knobs; the defaults are the ones every experiment
    uses unless explicitly swept."""

    alpha: float = 0.2
    lambda_smooth: float = 0.1
    mu_smooth: float = 0.1
    k_neighbors: int = 20
    num_heads: int = 4
    num_layers: int = 2
    hidden_dim: int = 16
    learning_rate: float = 0.005
    sparsifier: str = "topk"

    def validate(self) -> None:
        require(0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]")
        require(self.lambda_smooth >= 0 and self.mu_smooth >= 0,
                "smoothness weights must be non-negative")
        require(self.k_neighbors >= 1, "k_neighbors must be >= 1")
        require(self.num_heads >= 1 and self.num_layers >= 1 and self.hidden_dim >= 1,
                "num_heads, num_layers and hidden_dim must be >= 1")
        require(self.sparsifier in SPARSIFIERS,
                f"sparsifier must be one of {SPARSIFIERS}, got {self.sparsifier!r}")


@dataclass
class ModelParams:
    """Named parameter blocks plus their channel assignment."""

    blocks: dict[str, Tensor]
    channel_of: dict[str, str]
    variant: str  # "dual" | "plain"

    def block_values(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.blocks.items()}

    def blocks_in_channel(self, channel: str) -> list[str]:
        return [n for n, c in self.channel_of.items() if c == channel]

    def clone(self) -> "ModelParams":
        blocks = {n: ad.parameter(t.values) for n, t in self.blocks.items()}
        return ModelParams(blocks, dict(self.channel_of), self.variant)

    def structure_learner_blocks(self) -> list[str]:
        return [n for n in self.blocks if n == "sl_gnn" or n.startswith("sl_head_")]


def _uniform_block(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    bound = 1.0 / np.sqrt(rows)
    return ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))


def _head_vector(rng: np.random.Generator, dim: int) -> Tensor:
    # near-ones start so early scores behave like plain cosine
    return ad.parameter(1.0 + rng.uniform(-0.01, 0.01, size=(1, dim)))


def init_dual_params(feature_dim: int, num_classes: int, hp: Hyperparams, seed,
                     f0_channel: str = LOCAL_CHANNEL) -> ModelParams:
    """Seeded init of every dual-channel block.

    Weight matrices start uniform in +-1/sqrt(fan_in); head vectors start at
    all-ones plus small noise. ``f0_channel`` switches whether the feature
    projection is shared (it is private by default).
    """
    hp.validate()
    require(f0_channel in (GLOBAL_CHANNEL, LOCAL_CHANNEL), "f0_channel must be global or local")
    rng = as_rng(seed)
    d, hdim, L = feature_dim, hp.hidden_dim, hp.num_layers
    blocks: dict[str, Tensor] = {}
    channel: dict[str, str] = {}
    blocks["f0"] = _uniform_block(rng, d, hdim)
    channel["f0"] = f0_channel
    blocks["sl_gnn"] = _uniform_block(rng, d, hdim)
    channel["sl_gnn"] = GLOBAL_CHANNEL
    for h in range(hp.num_heads):
        blocks[f"sl_head_src_{h}"] = _head_vector(rng, hdim)
        blocks[f"sl_head_dst_{h}"] = _head_vector(rng, hdim)
        channel[f"sl_head_src_{h}"] = GLOBAL_CHANNEL
        channel[f"sl_head_dst_{h}"] = GLOBAL_CHANNEL
    for layer in range(L):
        blocks[f"global_{layer}"] = _uniform_block(rng, hdim, hdim)
        channel[f"global_{layer}"] = GLOBAL_CHANNEL
    for layer in range(L):
        blocks[f"local_{layer}"] = _uniform_block(rng, hdim, hdim)
        channel[f"local_{layer}"] = LOCAL_CHANNEL
    blocks["classifier"] = _uniform_block(rng, d + hdim * (L + 1), num_classes)
    channel["classifier"] = LOCAL_CHANNEL
    return ModelParams(blocks, channel, "dual")


def init_plain_params(feature_dim: int, num_classes: int, hp: Hyperparams, seed) -> ModelParams:
    """Single-channel architecture: projection, L conv layers, classifier."""
    hp.validate()
    rng = as_rng(seed)
    d, hdim, L = feature_dim, hp.hidden_dim, hp.num_layers
    blocks: dict[str, Tensor] = {"f0": _uniform_block(rng, d, hdim)}
    for layer in range(L):
        blocks[f"local_{layer}"] = _uniform_block(rng, hdim, hdim)
    blocks["classifier"] = _uniform_block(rng, d + hdim * (L + 1), num_classes)
    channel = {name: LOCAL_CHANNEL for name in blocks}
    return ModelParams(blocks, channel, "plain")


@dataclass
class GraphOperators:
    """Per-client constants reused across training steps."""

    x: Tensor
    adj: SparseOp

    @classmethod
    def from_graph(cls, g: Graph) -> "GraphOperators":
        return cls(Tensor(g.features), ad.row_normalized_adjacency(g))


def prepare_operators(g: Graph) -> GraphOperators:
    return GraphOperators.from_graph(g)


def _as_operators(graph_or_ops) -> GraphOperators:
    if isinstance(graph_or_ops, GraphOperators):
        return graph_or_ops
    return prepare_operators(graph_or_ops)


# ---------------------------------------------------------------------------
# structure learner
# ---------------------------------------------------------------------------

def structure_learner_embed(params: ModelParams, g) -> Tensor:
    """One aggregation layer over the original adjacency: relu(D^-1 A X W).

    ``g`` may be a Graph or the prepared per-client operators.
    """
    ops = _as_operators(g)
    return ad.relu(ad.sparse_dense_matmul(ops.adj, ad.matmul(ops.x, params.blocks["sl_gnn"])))


def pairwise_metric(params: ModelParams, z, u: int, v: int) -> float:
    """Mean over heads of cos(w_src . z_u, w_dst . z_v); zero vectors score 0."""
    zv = z.values if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    heads = sum(1 for n in params.blocks if n.startswith("sl_head_src_"))
    total = 0.0
    for h in range(heads):
        a = params.blocks[f"sl_head_src_{h}"].values.ravel() * zv[u]
        b = params.blocks[f"sl_head_dst_{h}"].values.ravel() * zv[v]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na > 0 and nb > 0:
            total += float(a @ b) / (na * nb)
    return total / heads


def score_all_pairs(params: ModelParams, z_values: np.ndarray) -> np.ndarray:
    """Dense pair-score matrix; the diagonal is set to -2 to exclude self."""
    n = z_values.shape[0]
    heads = sum(1 for name in params.blocks if name.startswith("sl_head_src_"))
    # sum of per-head cosines == one matmul of the stacked normalized embeddings
    a_parts, b_parts = [], []
    for h in range(heads):
        a = z_values * params.blocks[f"sl_head_src_{h}"].values
        b = z_values * params.blocks[f"sl_head_dst_{h}"].values
        na = np.linalg.norm(a, axis=1, keepdims=True)
        nb = np.linalg.norm(b, axis=1, keepdims=True)
        a_parts.append(np.divide(a, na, out=a, where=na > 0))
        b_parts.append(np.divide(b, nb, out=b, where=nb > 0))
    phi = np.hstack(a_parts) @ np.hstack(b_parts).T
    phi /= heads
    np.fill_diagonal(phi, -2.0)
    return phi


@dataclass
class LatentGraph:
    """Sparse learner-built graph: per-node retained neighbors and weights.

    ``scores`` are the raw pair-metric values of the retained entries (taped,
    so gradients reach the structure learner); ``weights`` are what message
    passing consumes (identical to ``scores`` unless the strict-binary
    sparsifier replaced them with straight-through ones).
    """

    pattern: SparsePattern
    scores: Tensor
    weights: Tensor
    k: int | None

    @property
    def num_nodes(self) -> int:
        return self.pattern.num_nodes

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.pattern.row_offsets)

    def retained_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pattern.row_ids.copy(), self.pattern.col_indices.copy()


def _topk_select(phi: np.ndarray, k: int) -> np.ndarray:
    """Boolean selection of the k largest entries per row, ties to smaller id."""
    n = phi.shape[0]
    kth = np.partition(phi, n - k, axis=1)[:, n - k:n - k + 1]
    select = phi > kth
    tie = phi == kth
    need = k - select.sum(axis=1)
    awkward = np.flatnonzero(tie.sum(axis=1) != need)
    if awkward.size == 0:
        select |= tie
    else:
        plain = np.ones(n, dtype=bool)
        plain[awkward] = False
        select[plain] |= tie[plain]
        for u in awkward.tolist():
            ids = np.flatnonzero(tie[u])[: need[u]]
            select[u, ids] = True
    return select


def select_latent_pattern(params: ModelParams, z_values: np.ndarray, hp: Hyperparams,
                          rng: np.random.Generator | None = None) -> SparsePattern:
    """Choose which pairs the latent graph keeps (selection is not on the tape).

    TopK keeps the k best-scoring candidates over all other nodes; Bernoulli
    samples each directed pair with probability (score + 1) / 2 and needs an
    rng for determinism.
    """
    n = z_values.shape[0]
    if hp.k_neighbors >= n and hp.sparsifier != "bernoulli":
        raise InputError(f"k_neighbors={hp.k_neighbors} must be < num_nodes={n}")
    phi = score_all_pairs(params, z_values)
    if hp.sparsifier == "bernoulli":
        if rng is None:
            raise InputError("bernoulli sparsifier needs an rng for sampling")
        prob = np.clip((phi + 1.0) / 2.0, 0.0, 1.0)
        select = rng.random((n, n)) < prob
    else:
        select = _topk_select(phi, hp.k_neighbors)
    rows, cols = np.nonzero(select)
    counts = np.bincount(rows, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return SparsePattern(n, offsets, cols.astype(np.int64))


def latent_scores_on_tape(params: ModelParams, z: Tensor, pattern: SparsePattern) -> Tensor:
    """Recompute the pair metric for the retained pairs as a taped operation."""
    heads = sum(1 for n in params.blocks if n.startswith("sl_head_src_"))
    src = [params.blocks[f"sl_head_src_{h}"] for h in range(heads)]
    dst = [params.blocks[f"sl_head_dst_{h}"] for h in range(heads)]
    return ad.multihead_pair_cosine(z, src, dst, pattern)


def build_latent_graph(params: ModelParams, z: Tensor, hp: Hyperparams,
                       rng: np.random.Generator | None = None,
                       pattern: SparsePattern | None = None) -> LatentGraph:
    """Score pairs, pick the retained set, and put its weights on the tape.

    The selection pattern is treated as a constant within a step; gradients
    flow through the retained scores only. Pass a precomputed ``pattern`` to
    hold the selection fixed (gradient checking does this).
    """
    if pattern is None:
        pattern = select_latent_pattern(params, z.values, hp, rng=rng)
    scores = latent_scores_on_tape(params, z, pattern)
    weights = ad.straight_through_ones(scores) if hp.sparsifier == "topk_binary" else scores
    k = hp.k_neighbors if hp.sparsifier != "bernoulli" else None
    return LatentGraph(pattern, scores, weights, k)


# ---------------------------------------------------------------------------
# forward / loss
# ---------------------------------------------------------------------------

def dual_channel_forward(params: ModelParams, g, lg: LatentGraph | None,
                         hp: Hyperparams) -> tuple[Tensor, Tensor]:
    """Run the fused forward pass; returns (readout, logits).

    ``g`` may be a Graph or prepared operators. At alpha endpoints the dead
    channel is skipped entirely, which keeps the logits bitwise independent
    of it.
    """
    ops = _as_operators(g)
    alpha = hp.alpha
    z = ad.relu(ad.matmul(ops.x, params.blocks["f0"]))
    layers = [z]
    plain = params.variant == "plain"
    normalized = None
    if not plain and alpha < 1.0:
        if lg is None:
            raise InputError("dual-channel forward needs a latent graph when alpha < 1")
        normalized = ad.sparse_row_normalize(lg.pattern, lg.weights)
    for layer in range(hp.num_layers):
        if plain or alpha == 1.0:
            z = ad.relu(ad.sparse_dense_matmul(ops.adj, ad.matmul(z, params.blocks[f"local_{layer}"])))
        elif alpha == 0.0:
            z = ad.relu(ad.sparse_weighted_matmul(
                lg.pattern, normalized, ad.matmul(z, params.blocks[f"global_{layer}"])))
        else:
            e_term = ad.sparse_dense_matmul(ops.adj, ad.matmul(z, params.blocks[f"local_{layer}"]))
            h_term = ad.sparse_weighted_matmul(
                lg.pattern, normalized, ad.matmul(z, params.blocks[f"global_{layer}"]))
            z = ad.relu(ad.add(ad.scale(e_term, alpha), ad.scale(h_term, 1.0 - alpha)))
        layers.append(z)
    z_out = ad.concat_cols([ops.x] + layers)
    logits = ad.matmul(z_out, params.blocks["classifier"])
    return z_out, logits


def smooth_loss(lg: LatentGraph | None, features: np.ndarray,
                lambda_smooth: float, mu_smooth: float) -> Tensor:
    """Feature-smoothness plus squared-weight penalty on the latent graph."""
    if lg is None or (lambda_smooth == 0.0 and mu_smooth == 0.0):
        return Tensor(0.0)
    terms = []
    if lambda_smooth != 0.0:
        terms.append(ad.scale(
            ad.weighted_feature_smoothness(lg.weights, lg.pattern, features), lambda_smooth))
    if mu_smooth != 0.0:
        terms.append(ad.scale(ad.frobenius_sq(lg.weights), mu_smooth))
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total


def total_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray,
               lg: LatentGraph | None, features: np.ndarray, hp: Hyperparams) -> Tensor:
    """Masked mean cross-entropy plus the smoothness regularizer."""
    ce = ad.masked_cross_entropy(logits, labels, mask)
    return ad.add(ce, smooth_loss(lg, features, hp.lambda_smooth, hp.mu_smooth))


def _forward_with_latent(params: ModelParams, ops: GraphOperators, hp: Hyperparams,
                         rng: np.random.Generator | None,
                         pattern: SparsePattern | None = None):
    lg = None
    if params.variant == "dual":
        z_sl = structure_learner_embed(params, ops)
        lg = build_latent_graph(params, z_sl, hp, rng=rng, pattern=pattern)
    z_out, logits = dual_channel_forward(params, ops, lg, hp)
    return lg, z_out, logits


def train_step(state, hp: Hyperparams, rng: np.random.Generator | None = None) -> dict:
    """One full-batch step: embed, rebuild latent graph, forward, backprop, Adam.

    ``state`` is any object with ``graph``, ``split``, ``params``, ``adam``
    and ``ops`` attributes (the federated runtime's client state qualifies).
    """
    from .optim import adam_step

    g: Graph = state.graph
    split: NodeSplit = state.split
    params: ModelParams = state.params
    require(bool(split.train_mask.any()), "train_step needs at least one training node")
    try:
        with Tape() as tape:
            lg, _, logits = _forward_with_latent(params, state.ops, hp, rng)
            ce = ad.masked_cross_entropy(logits, g.labels, split.train_mask)
            sm = smooth_loss(lg, g.features, hp.lambda_smooth, hp.mu_smooth)
            loss = ad.add(ce, sm)
        tape.backward(loss)
    except NumericFaultError as exc:
        raise NumericFaultError(f"training step hit a numeric fault: {exc}") from exc
    grads = {name: t.grad for name, t in params.blocks.items()}
    adam_step(params.blocks, grads, state.adam)
    return {
        "ce_loss": ce.item(),
        "smooth_loss": sm.item(),
        "total_loss": loss.item(),
        "train_acc": accuracy(logits.values, g.labels, split.train_mask),
    }


def predict(params: ModelParams, ops: GraphOperators, hp: Hyperparams,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inference pass; returns (readout values, logit values)."""
    _, z_out, logits = _forward_with_latent(params, ops, hp, rng)
    return z_out.values, logits.values


def make_loss_builder(g: Graph, split: NodeSplit, params: ModelParams, hp: Hyperparams,
                      pattern: SparsePattern | None = None,
                      rng: np.random.Generator | None = None):
    """Deterministic closure computing the training loss from current params.

    When ``params`` is the dual variant, the latent selection pattern is fixed
    up front (from the current parameters) so finite differences probe a
    smooth function; pass ``pattern`` to reuse an existing selection.
    """
    ops = prepare_operators(g)
    if params.variant == "dual" and pattern is None:
        with Tape():
            z = structure_learner_embed(params, ops)
        pattern = select_latent_pattern(params, z.values, hp,
                                        rng=rng or np.random.default_rng(0))

    def build_loss() -> Tensor:
        lg = None
        if params.variant == "dual":
            z_sl = structure_learner_embed(params, ops)
            lg = build_latent_graph(params, z_sl, hp, pattern=pattern)
        _, logits = dual_channel_forward(params, ops, lg, hp)
        return total_loss(logits, g.labels, split.train_mask, lg, g.features, hp)

    return build_loss


def full_model_grad_check(g: Graph, split: NodeSplit, params: ModelParams,
                          hp: Hyperparams, fd_step: float = 1e-5,
                          tol: float = 1e-4) -> dict:
    """Gradient-check every parameter block of a model on one small client."""
    builder = make_loss_builder(g, split, params, hp)
    return ad.grad_check(builder, params.blocks, fd_step=fd_step, tol=tol)
