"""Experiment orchestration: dataset assembly, single runs, repeats, sweeps.

A single run writes everything needed to reproduce and inspect it:

    out_dir/
      config.ini            resolved config echo
      metrics.csv           one row per round per client plus a mean row
      summary.json          final and best-validation-round test metrics
      checkpoints/client_NN/{blocks.bin, params.json, split.csv}

``run_experiment`` executes ``repeats`` such runs with derived seeds and
reports mean and sample standard deviation of the final test metric.
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, save_config
from .datagen import GeneratorConfig, conflicting_mixing, generate_conflicting_clients, generate_graph
from .exceptions import InputError, UsageError
from .federated import FederatedTrainer, RoundMetrics
from .graph import Graph, NodeSplit, edge_homophily, flip_edge_noise, neighbor_label_distribution
from .io import load_graph_bundle, save_blocks, save_graph_bundle
from .model import Hyperparams, ModelParams
from .partition import (balanced_partition, five_group_split, louvain,
                        make_federated_dataset, merge_small_communities)
from .validation import derived_rng, require

SWEEPABLE = {
    "alpha": "alpha",
    "lambda": "lambda_smooth",
    "mu": "mu_smooth",
    "k": "k_neighbors",
    "heads": "num_heads",
    "scope": "scope",
    "sparsifier": "sparsifier",
}


def resolve_seeds(cfg: ExperimentConfig) -> list[int]:
    """Per-repeat seeds: explicit list or a pure function of (seed, repeat)."""
    if cfg.seeds:
        return list(cfg.seeds)
    return [int(derived_rng(cfg.seed, 9000 + r).integers(0, 2 ** 31))
            for r in range(cfg.repeats)]


def generator_config(cfg: ExperimentConfig, seed: int) -> GeneratorConfig:
    return GeneratorConfig(num_nodes=cfg.nodes, num_classes=cfg.classes,
                           target_homophily=cfg.homophily, mean_degree=cfg.degree,
                           feature_dim=cfg.feature_dim, feature_separation=cfg.separation,
                           seed=seed)


def build_datasets(cfg: ExperimentConfig, seed: int) -> list[tuple[Graph, NodeSplit]]:
    """Assemble the per-client (graph, split) list for one repeat."""
    if cfg.data_source == "generated":
        gen = generator_config(cfg, seed)
        if cfg.clients == 1:
            graphs = [generate_graph(gen)]
        else:
            graphs = generate_conflicting_clients(gen, cfg.clients, cfg.conflict)
    else:
        root = Path(cfg.data_path)
        client_dirs = sorted(root.glob("client_*"))
        if client_dirs:
            graphs = [load_graph_bundle(d) for d in client_dirs]
        else:
            whole = load_graph_bundle(root)
            if cfg.partition_method == "louvain":
                pa = louvain(whole, seed)
                pa = merge_small_communities(whole, pa, cfg.min_size, seed)
            elif cfg.partition_method == "balanced":
                pa = balanced_partition(whole, cfg.clients, seed)
            else:
                raise InputError("a single-bundle data directory needs "
                                 "partition.method louvain or balanced")
            return make_federated_dataset(whole, pa, seed)
    if cfg.edge_flip > 0.0:
        graphs = [flip_edge_noise(g, cfg.edge_flip, derived_rng(seed, 500 + i))
                  for i, g in enumerate(graphs)]
    return [(g, five_group_split(g.num_nodes, derived_rng(seed, i)))
            for i, g in enumerate(graphs)]


def trainer_for(cfg: ExperimentConfig, seed: int) -> FederatedTrainer:
    return FederatedTrainer(
        method=cfg.method, scope=cfg.scope, rounds=cfg.rounds,
        local_epochs=cfg.local_epochs, alpha=cfg.alpha,
        lambda_smooth=cfg.lambda_smooth, mu_smooth=cfg.mu_smooth,
        k_neighbors=cfg.k_neighbors, num_heads=cfg.num_heads,
        num_layers=cfg.num_layers, hidden_dim=cfg.hidden_dim,
        learning_rate=cfg.learning_rate, sparsifier=cfg.sparsifier,
        participation=cfg.participation, random_state=seed)


def write_metrics_csv(history: list[RoundMetrics], path) -> None:
    """One row per round per client plus a mean row; full-precision floats.

    Wall time is deliberately excluded so identically-seeded runs produce
    byte-identical files.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,client,train_acc,val_acc,test_acc,ce_loss,smooth_loss\n")
        for m in history:
            for cid, (tr, va, te) in enumerate(zip(m.train_acc, m.val_acc, m.test_acc)):
                fh.write(f"{m.round_index},{cid},{tr!r},{va!r},{te!r},,\n")
            fh.write(f"{m.round_index},mean,{m.mean_train!r},{m.mean_val!r},"
                     f"{m.mean_test!r},{m.ce_loss!r},{m.smooth_loss!r}\n")


def write_curves_csv(metrics_path, out_path) -> None:
    """Re-shape a metrics.csv into long-format convergence curves."""
    with open(metrics_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        with open(out_path, "w", encoding="utf-8") as out:
            out.write("round,client,split,metric\n")
            for line in fh:
                parts = line.strip().split(",")
                for split in ("train", "val", "test"):
                    value = parts[idx[f"{split}_acc"]]
                    out.write(f"{parts[0]},{parts[1]},{split},{value}\n")


def save_checkpoints(trainer: FederatedTrainer, out_dir) -> None:
    hp = trainer._hyperparams()
    for client in trainer.clients_:
        cdir = Path(out_dir) / f"client_{client.client_id:02d}"
        cdir.mkdir(parents=True, exist_ok=True)
        save_blocks({n: t.values for n, t in client.params.blocks.items()},
                    cdir / "blocks.bin")
        meta = {
            "variant": client.params.variant,
            "channel_of": client.params.channel_of,
            "hyperparams": dataclasses.asdict(hp),
            "num_nodes": client.graph.num_nodes,
        }
        (cdir / "params.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        with open(cdir / "split.csv", "w", encoding="utf-8") as fh:
            fh.write("node_id,role\n")
            split = client.split
            for node in range(client.graph.num_nodes):
                role = ("train" if split.train_mask[node] else
                        "val" if split.val_mask[node] else
                        "test" if split.test_mask[node] else "none")
                fh.write(f"{node},{role}\n")


def load_checkpoint_params(client_dir) -> tuple[ModelParams, Hyperparams]:
    from .autodiff import parameter
    from .io import load_blocks

    cdir = Path(client_dir)
    meta = json.loads((cdir / "params.json").read_text(encoding="utf-8"))
    blocks = {name: parameter(arr) for name, arr in load_blocks(cdir / "blocks.bin").items()}
    params = ModelParams(blocks, dict(meta["channel_of"]), meta["variant"])
    return params, Hyperparams(**meta["hyperparams"])


def load_split_csv(path, num_nodes: int) -> NodeSplit:
    roles = np.full(num_nodes, "none", dtype=object)
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            node, role = line.strip().split(",")
            roles[int(node)] = role
    return NodeSplit(roles == "train", roles == "val", roles == "test")


def train_once(cfg: ExperimentConfig, seed: int, out_dir) -> dict:
    """One full pipeline: data, training, artifacts. Returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets = build_datasets(cfg, seed)
    started = time.perf_counter()
    trainer = trainer_for(cfg, seed).fit(datasets)
    elapsed = time.perf_counter() - started
    save_config(dataclasses.replace(cfg, seeds=(seed,), repeats=1), out / "config.ini")
    write_metrics_csv(trainer.history_, out / "metrics.csv")
    save_checkpoints(trainer, out / "checkpoints")
    summary = dict(trainer.summary_)
    summary.update({"seed": seed, "num_clients": len(trainer.clients_)})
    # timing lives outside summary.json so identically-seeded runs stay
    # byte-identical
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"wall_time_s": elapsed}, indent=2),
                                     encoding="utf-8")
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run ``cfg.repeats`` pipelines with derived seeds; report mean +- std.

    The reported std is the sample standard deviation (n-1 denominator),
    zero for a single repeat.
    """
    cfg.validate()
    if out_dir is None:
        out_dir = Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.ini")
    seeds = resolve_seeds(cfg)
    finals, bests, per_repeat = [], [], []
    for r, seed in enumerate(seeds):
        try:
            summary = train_once(cfg, seed, out / f"repeat_{r:02d}")
        except Exception as exc:
            raise type(exc)(f"repeat {r} (seed {seed}) failed in training stage: {exc}") \
                from exc
        finals.append(summary["final_test"])
        bests.append(summary["best_val_test"])
        per_repeat.append(summary)
    def stats(xs):
        mean = float(np.mean(xs))
        std = float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0
        return {"mean": mean, "std": std}
    result = {
        "repeats": len(seeds),
        "seeds": seeds,
        "final_test": stats(finals),
        "best_val_test": stats(bests),
        "per_repeat": per_repeat,
    }
    (out / "summary.json").write_text(json.dumps(result, indent=2), encoding="utf-8")
    return result


def ablate(cfg: ExperimentConfig, param: str, values: list, out_dir) -> list[dict]:
    """One run_experiment per sweep value; consolidated sweep.csv."""
    if param not in SWEEPABLE:
        raise UsageError(f"unknown sweep parameter {param!r}; valid: "
                         f"{sorted(SWEEPABLE)}")
    require(len(values) > 0, "sweep needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    field = SWEEPABLE[param]
    rows = []
    for value in values:
        typed = type(getattr(cfg, field))(value)
        sub = dataclasses.replace(cfg, **{field: typed})
        result = run_experiment(sub, out / f"{param}_{value}")
        rows.append({"param": param, "value": typed,
                     "mean": result["final_test"]["mean"],
                     "std": result["final_test"]["std"]})
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("param,value,final_test_mean,final_test_std\n")
        for row in rows:
            fh.write(f"{row['param']},{row['value']},{row['mean']!r},{row['std']!r}\n")
    return rows


def evaluate_checkpoints(checkpoints_dir, data_dir, lia: bool = False,
                         lia_pairs: int = 200, seed: int = 0) -> dict:
    """Re-score saved checkpoints against a data directory of client bundles.

    ``checkpoints_dir`` may be a training output directory (containing
    ``checkpoints/`` and ``metrics.csv``) or the checkpoints directory itself.
    """
    from .metrics import EvalReport, accuracy, binary_auc, client_divergence, link_inference_attack
    from .model import predict, prepare_operators

    root = Path(checkpoints_dir)
    ckpt = root / "checkpoints" if (root / "checkpoints").is_dir() else root
    client_dirs = sorted(ckpt.glob("client_*"))
    require(len(client_dirs) > 0, f"no client_* checkpoints under {ckpt}")
    data_root = Path(data_dir)
    bundles = sorted(data_root.glob("client_*"))
    require(len(bundles) == len(client_dirs),
            f"{len(bundles)} data bundles vs {len(client_dirs)} checkpoints")

    accs, aucs, homs, dists, lias = [], [], [], [], []
    for i, (cdir, bdir) in enumerate(zip(client_dirs, bundles)):
        g = load_graph_bundle(bdir)
        params, hp = load_checkpoint_params(cdir)
        split = load_split_csv(cdir / "split.csv", g.num_nodes)
        z_out, logits = predict(params, prepare_operators(g), hp,
                                rng=derived_rng(seed, 7, i))
        accs.append(accuracy(logits, g.labels, split.test_mask))
        if g.num_classes == 2:
            pos = logits[:, 1] - logits[:, 0]
            aucs.append(binary_auc(pos, g.labels, split.test_mask))
        homs.append(edge_homophily(g))
        dists.append(neighbor_label_distribution(g))
        if lia:
            pairs = min(lia_pairs, g.num_edges)
            lias.append(link_inference_attack(z_out, g, pairs, seed=derived_rng(seed, 8, i)))
    report = EvalReport(
        client_accuracy=accs,
        mean_accuracy=float(np.mean(accs)),
        client_auc=aucs or None,
        mean_auc=float(np.mean(aucs)) if aucs else None,
        lia_accuracy=float(np.mean(lias)) if lia else None,
        homophily=homs,
        divergence=client_divergence(dists))
    out = report.to_dict()
    out["client_divergence"] = out.pop("divergence")
    return out


def write_generated_bundles(cfg: ExperimentConfig, out_dir) -> dict:
    """gen-data backend: per-client bundles plus a manifest of realized stats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen = generator_config(cfg, cfg.seed)
    if cfg.clients == 1:
        graphs = [generate_graph(gen)]
        mixings = [None]
    else:
        graphs = generate_conflicting_clients(gen, cfg.clients, cfg.conflict)
        mixings = conflicting_mixing(gen, cfg.clients, cfg.conflict)
    manifest = {"seed": cfg.seed, "clients": []}
    for i, g in enumerate(graphs):
        save_graph_bundle(g, out / f"client_{i:02d}")
        manifest["clients"].append({
            "directory": f"client_{i:02d}",
            "num_nodes": g.num_nodes,
            "num_edges": g.num_edges,
            "edge_homophily": edge_homophily(g),
            "mixing_matrix": None if mixings[i] is None else mixings[i].tolist(),
            "neighbor_label_distribution": neighbor_label_distribution(g).tolist(),
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest
