"""Federated graph learning on heterophilic graphs with a shared structure learner."""

from .autodiff import Tape, Tensor, backward, grad_check
from .datagen import GeneratorConfig, generate_conflicting_clients, generate_graph
from .exceptions import (InputError, NumericFaultError, ProtocolError, ShapeError,
                         UndefinedMetricError, UsageError)
from .federated import (AggregationScope, ClientState, FederatedTrainer, RoundMetrics,
                        aggregate, baseline_fedavg, baseline_local, make_clients,
                        run_rounds, summarize)
from .graph import (Graph, NodeSplit, build_graph, edge_homophily, flip_edge_noise,
                    induced_subgraph, neighbor_label_distribution)
from .io import load_graph_bundle, load_graph_files, save_graph_bundle
from .metrics import (EvalReport, accuracy, binary_auc, client_divergence,
                      link_inference_attack)
from .model import (Hyperparams, LatentGraph, ModelParams, build_latent_graph,
                    dual_channel_forward, full_model_grad_check, init_dual_params,
                    init_plain_params, pairwise_metric, predict, prepare_operators,
                    smooth_loss, structure_learner_embed, total_loss, train_step)
from .optim import AdamState, adam_step
from .partition import (BalancedPartitioner, LouvainPartitioner, PartitionAssignment,
                        balanced_partition, graph_modularity, louvain,
                        make_federated_dataset, merge_small_communities)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AggregationScope", "BalancedPartitioner", "ClientState",
    "EvalReport", "FederatedTrainer", "GeneratorConfig", "Graph", "Hyperparams",
    "InputError", "LatentGraph", "LouvainPartitioner", "ModelParams", "NodeSplit",
    "NumericFaultError", "PartitionAssignment", "ProtocolError", "RoundMetrics",
    "ShapeError", "Tape", "Tensor", "UndefinedMetricError", "UsageError",
    "accuracy", "adam_step", "aggregate", "backward", "balanced_partition",
    "baseline_fedavg", "baseline_local", "binary_auc", "build_graph",
    "build_latent_graph", "client_divergence", "dual_channel_forward",
    "edge_homophily", "flip_edge_noise", "full_model_grad_check",
    "generate_conflicting_clients", "generate_graph", "grad_check",
    "graph_modularity", "induced_subgraph", "init_dual_params", "init_plain_params",
    "link_inference_attack", "load_graph_bundle", "load_graph_files", "louvain",
    "make_clients", "make_federated_dataset", "merge_small_communities",
    "neighbor_label_distribution", "pairwise_metric", "predict",
    "prepare_operators", "run_rounds", "save_graph_bundle", "smooth_loss",
    "structure_learner_embed", "summarize", "total_loss", "train_step",
]
