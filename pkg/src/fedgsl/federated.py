"""Federated round loop: local training, selective aggregation, baselines.

Clients are in-process data structures, not network peers. Every round each
participating client runs its local steps, the server averages the blocks
inside the aggregation scope weighted by client node counts, and the averaged
blocks are broadcast back before evaluation. Blocks outside the scope are
never touched, which is what keeps the personalized channels private.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import InputError, NumericFaultError, ProtocolError
from .graph import Graph, NodeSplit
from .metrics import accuracy
from .model import (GraphOperators, Hyperparams, ModelParams, init_dual_params,
                    init_plain_params, predict, prepare_operators, train_step)
from .optim import AdamState
from .validation import derived_rng, require

_STREAM_TRAIN, _STREAM_PARTICIPATION, _STREAM_EVAL = 1, 2, 3


class AggregationScope(Enum):
    """Which parameter blocks the server averages each round."""

    GLOBAL_CHANNEL_ONLY = "global"
    ALL = "all"
    TASK_ONLY = "task"
    NONE = "none"

    @classmethod
    def from_string(cls, name: str) -> "AggregationScope":
        for scope in cls:
            if scope.value == name:
                return scope
        raise InputError(f"unknown scope {name!r}; choose from "
                         f"{[s.value for s in cls]}")

    def blocks_in_scope(self, params: ModelParams) -> list[str]:
        if self is AggregationScope.NONE:
            return []
        if self is AggregationScope.ALL:
            return list(params.blocks)
        if self is AggregationScope.GLOBAL_CHANNEL_ONLY:
            return params.blocks_in_channel("global")
        # TASK_ONLY: everything except the structure learner
        learner = set(params.structure_learner_blocks())
        return [n for n in params.blocks if n not in learner]


@dataclass
class ClientState:
    """One client's graph, split, parameters and optimizer state."""

    client_id: int
    graph: Graph
    split: NodeSplit
    params: ModelParams
    adam: AdamState
    ops: GraphOperators

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


@dataclass
class RoundMetrics:
    """Per-round accuracies (one entry per client) and mean loss components.

    Test metrics are computed after the round's aggregation so they reflect
    the updated shared blocks. Wall time is informational and never part of
    serialized metric streams.
    """

    round_index: int
    train_acc: list[float]
    val_acc: list[float]
    test_acc: list[float]
    ce_loss: float
    smooth_loss: float
    wall_time: float = 0.0

    @property
    def mean_train(self) -> float:
        return float(np.mean(self.train_acc))

    @property
    def mean_val(self) -> float:
        return float(np.mean(self.val_acc))

    @property
    def mean_test(self) -> float:
        return float(np.mean(self.test_acc))


def make_clients(datasets: list[tuple[Graph, NodeSplit]], hp: Hyperparams,
                 variant: str = "dual", init_seed: int = 0,
                 f0_channel: str = "local") -> list[ClientState]:
    """Build client states that all start from one seeded parameter init."""
    require(len(datasets) >= 1, "need at least one client dataset")
    dims = {g.feature_dim for g, _ in datasets}
    classes = {g.num_classes for g, _ in datasets}
    if len(dims) != 1 or len(classes) != 1:
        raise ProtocolError(f"clients disagree on feature_dim {dims} or num_classes {classes}")
    d, c = dims.pop(), classes.pop()
    if variant == "dual":
        template = init_dual_params(d, c, hp, init_seed, f0_channel=f0_channel)
    elif variant == "plain":
        template = init_plain_params(d, c, hp, init_seed)
    else:
        raise InputError(f"unknown model variant {variant!r}")
    clients = []
    for cid, (g, split) in enumerate(datasets):
        require(split.num_nodes == g.num_nodes, f"client {cid}: split size mismatch")
        clients.append(ClientState(
            client_id=cid, graph=g, split=split, params=template.clone(),
            adam=AdamState(learning_rate=hp.learning_rate),
            ops=prepare_operators(g)))
    return clients


def aggregate(clients: list[ClientState], scope: AggregationScope) -> dict[str, np.ndarray]:
    """Node-count-weighted average of every block inside the scope.

    Returns the averaged blocks without touching any client, so blocks outside
    the scope stay bitwise intact everywhere.
    """
    require(len(clients) >= 1, "aggregate needs at least one client")
    ref = clients[0].params
    for cl in clients[1:]:
        if set(cl.params.blocks) != set(ref.blocks):
            raise ProtocolError("clients disagree on block names")
        for name, t in cl.params.blocks.items():
            if t.values.shape != ref.blocks[name].values.shape:
                raise ProtocolError(f"block {name!r} shape mismatch across clients: "
                                    f"{t.values.shape} vs {ref.blocks[name].values.shape}")
    total = float(sum(cl.num_nodes for cl in clients))
    averaged: dict[str, np.ndarray] = {}
    for name in scope.blocks_in_scope(ref):
        acc = np.zeros_like(ref.blocks[name].values)
        for cl in clients:
            acc += (cl.num_nodes / total) * cl.params.blocks[name].values
        averaged[name] = acc
    return averaged


def _evaluate_client(client: ClientState, hp: Hyperparams,
                     rng: np.random.Generator) -> tuple[float, float, float]:
    _, logits = predict(client.params, client.ops, hp, rng=rng)
    g, split = client.graph, client.split
    return (accuracy(logits, g.labels, split.train_mask),
            accuracy(logits, g.labels, split.val_mask),
            accuracy(logits, g.labels, split.test_mask))


def run_rounds(clients: list[ClientState], hp: Hyperparams, scope: AggregationScope,
               rounds: int, local_epochs: int = 1, seed: int = 0,
               participation: float = 1.0) -> tuple[list[RoundMetrics], list[ClientState]]:
    """Run the federated protocol for ``rounds`` communication rounds.

    Per round: participating clients train ``local_epochs`` full-batch steps,
    the server aggregates the scoped blocks, broadcasts them to everyone, and
    all clients are evaluated. Deterministic given the seed; every RNG stream
    derives from (seed, stream tag, round, client).
    """
    require(0.0 < participation <= 1.0, "participation must lie in (0, 1]")
    require(local_epochs >= 1, "local_epochs must be >= 1")
    history: list[RoundMetrics] = []
    for r in range(rounds):
        started = time.perf_counter()
        if participation >= 1.0:
            active = clients
        else:
            count = max(1, int(np.ceil(participation * len(clients))))
            pick = derived_rng(seed, _STREAM_PARTICIPATION, r).choice(
                len(clients), size=count, replace=False)
            active = [clients[i] for i in sorted(pick.tolist())]
        ce_vals, sm_vals = [], []
        for client in active:
            for epoch in range(local_epochs):
                rng = derived_rng(seed, _STREAM_TRAIN, r, client.client_id, epoch)
                try:
                    step = train_step(client, hp, rng=rng)
                except NumericFaultError as exc:
                    raise NumericFaultError(
                        f"round {r}: client {client.client_id} aborted: {exc}") from exc
            ce_vals.append(step["ce_loss"])
            sm_vals.append(step["smooth_loss"])
        averaged = aggregate(active, scope)
        for client in clients:
            for name, arr in averaged.items():
                client.params.blocks[name].values = arr.copy()
        train_a, val_a, test_a = [], [], []
        for client in clients:
            tr, va, te = _evaluate_client(
                client, hp, derived_rng(seed, _STREAM_EVAL, r, client.client_id))
            train_a.append(tr)
            val_a.append(va)
            test_a.append(te)
        history.append(RoundMetrics(
            round_index=r, train_acc=train_a, val_acc=val_a, test_acc=test_a,
            ce_loss=float(np.mean(ce_vals)), smooth_loss=float(np.mean(sm_vals)),
            wall_time=time.perf_counter() - started))
    return history, clients


def baseline_local(clients: list[ClientState], hp: Hyperparams, rounds: int,
                   seed: int = 0) -> tuple[list[RoundMetrics], list[ClientState]]:
    """Pure local training: the round loop with no aggregation at all."""
    return run_rounds(clients, hp, AggregationScope.NONE, rounds, seed=seed)


def baseline_fedavg(clients: list[ClientState], hp: Hyperparams, rounds: int,
                    seed: int = 0) -> tuple[list[RoundMetrics], list[ClientState]]:
    """Full-model weighted averaging every round.

    Pass plain-variant clients: the classic baseline is the single-channel
    architecture without a structure learner.
    """
    return run_rounds(clients, hp, AggregationScope.ALL, rounds, seed=seed)


def summarize(history: list[RoundMetrics]) -> dict:
    """Final-round and best-validation-round mean test metrics."""
    if not history:
        return {"final_test": None, "best_val_round": None, "best_val_test": None}
    best = int(np.argmax([m.mean_val for m in history]))
    return {
        "final_test": history[-1].mean_test,
        "best_val_round": history[best].round_index,
        "best_val_test": history[best].mean_test,
    }


_METHOD_SETTINGS = {
    "dual": ("dual", None),       # scope comes from the estimator parameter
    "fedavg": ("plain", AggregationScope.ALL),
    "local": ("plain", AggregationScope.NONE),
}


class FederatedTrainer(BaseEstimator):
    """Estimator-style front end over the federated round loop.

    ``fit`` takes a list of (Graph, NodeSplit) pairs, one per client. With
    ``method="dual"`` the dual-channel model is trained and ``scope`` picks
    which blocks the server shares (the default shares only the global
    channel). ``method="fedavg"`` and ``method="local"`` train the plain
    single-channel architecture with full and no aggregation respectively.
    """

    def __init__(self, method: str = "dual", scope: str = "global", rounds: int = 200,
                 local_epochs: int = 1, alpha: float = 0.2, lambda_smooth: float = 0.1,
                 mu_smooth: float = 0.1, k_neighbors: int = 20, num_heads: int = 4,
                 num_layers: int = 2, hidden_dim: int = 16, learning_rate: float = 0.005,
                 sparsifier: str = "topk", participation: float = 1.0,
                 f0_channel: str = "local", random_state: int = 0):
        self.method = method
        self.scope = scope
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.alpha = alpha
        self.lambda_smooth = lambda_smooth
        self.mu_smooth = mu_smooth
        self.k_neighbors = k_neighbors
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.sparsifier = sparsifier
        self.participation = participation
        self.f0_channel = f0_channel
        self.random_state = random_state

    def _hyperparams(self) -> Hyperparams:
        return Hyperparams(
            alpha=self.alpha, lambda_smooth=self.lambda_smooth, mu_smooth=self.mu_smooth,
            k_neighbors=self.k_neighbors, num_heads=self.num_heads,
            num_layers=self.num_layers, hidden_dim=self.hidden_dim,
            learning_rate=self.learning_rate, sparsifier=self.sparsifier)

    def fit(self, X, y=None):
        """Train on a list of (Graph, NodeSplit) client datasets."""
        if self.method not in _METHOD_SETTINGS:
            raise InputError(f"unknown method {self.method!r}; choose from "
                             f"{sorted(_METHOD_SETTINGS)}")
        variant, forced_scope = _METHOD_SETTINGS[self.method]
        scope = forced_scope if forced_scope is not None \
            else AggregationScope.from_string(self.scope)
        hp = self._hyperparams()
        clients = make_clients(X, hp, variant=variant, init_seed=self.random_state,
                               f0_channel=self.f0_channel)
        history, clients = run_rounds(
            clients, hp, scope, self.rounds, local_epochs=self.local_epochs,
            seed=self.random_state, participation=self.participation)
        self.clients_ = clients
        self.history_ = history
        self.scope_ = scope
        self.summary_ = summarize(history)
        return self

    def _check_fitted(self):
        if not hasattr(self, "clients_"):
            raise NotFittedError("call fit before using this trainer")

    def predict_client(self, client_index: int) -> np.ndarray:
        """Predicted class ids for every node of one client."""
        self._check_fitted()
        client = self.clients_[client_index]
        _, logits = predict(client.params, client.ops, self._hyperparams(),
                            rng=derived_rng(self.random_state, _STREAM_EVAL, self.rounds,
                                            client.client_id))
        return np.argmax(logits, axis=1)

    def client_embeddings(self, client_index: int) -> np.ndarray:
        """Readout-layer embeddings for one client (what an attacker would see)."""
        self._check_fitted()
        client = self.clients_[client_index]
        z_out, _ = predict(client.params, client.ops, self._hyperparams(),
                           rng=derived_rng(self.random_state, _STREAM_EVAL, self.rounds,
                                           client.client_id))
        return z_out

    def score(self, X=None, y=None) -> float:
        """Final-round mean test accuracy across clients."""
        self._check_fitted()
        return self.summary_["final_test"]
