"""Command-line front end.

Subcommands: gen-data, partition, train, evaluate, ablate, selftest.
Human-readable messages go to stderr; machine-readable artifacts go to files.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .exceptions import UsageError


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions (exit code 1)."""

    def error(self, message):
        raise UsageError(message)


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="fedgsl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[], help="generate synthetic client graphs")
    gen.add_argument("--nodes", type=int, default=1000)
    gen.add_argument("--classes", type=int, default=5)
    gen.add_argument("--homophily", type=float, default=0.2)
    gen.add_argument("--degree", type=float, default=10.0)
    gen.add_argument("--feature-dim", type=int, default=16)
    gen.add_argument("--separation", type=float, default=1.0)
    gen.add_argument("--clients", type=int, default=4)
    gen.add_argument("--conflict", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    part = sub.add_parser("partition", help="split one graph bundle into clients")
    part.add_argument("--data", required=True, help="graph bundle directory")
    part.add_argument("--method", choices=["louvain", "balanced"], required=True)
    part.add_argument("--clients", type=int, default=4,
                      help="part count for balanced (louvain reports its own)")
    part.add_argument("--min-size", type=int, default=50)
    part.add_argument("--seed", type=int, default=0)
    part.add_argument("--out", required=True, help="assignment CSV path")

    train = sub.add_parser("train", help="run one federated training pipeline")
    train.add_argument("--config", help="INI config; flags below override it")
    train.add_argument("--method", choices=["dual", "fedavg", "local"])
    train.add_argument("--scope", choices=["global", "all", "task", "none"])
    train.add_argument("--rounds", type=int)
    train.add_argument("--local-epochs", type=int, dest="local_epochs")
    train.add_argument("--alpha", type=float)
    train.add_argument("--k", type=int, dest="k_neighbors")
    train.add_argument("--heads", type=int, dest="num_heads")
    train.add_argument("--lambda", type=float, dest="lambda_smooth")
    train.add_argument("--mu", type=float, dest="mu_smooth")
    train.add_argument("--hidden", type=int, dest="hidden_dim")
    train.add_argument("--lr", type=float, dest="learning_rate")
    train.add_argument("--sparsifier", choices=["topk", "bernoulli", "topk_binary"])
    train.add_argument("--participation", type=float)
    train.add_argument("--edge-flip", type=float, dest="edge_flip")
    train.add_argument("--seed", type=int)
    train.add_argument("--data", help="client bundles directory (omit to generate)")
    train.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="re-score checkpoints against data")
    ev.add_argument("--checkpoints", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--lia", action="store_true", help="run the link-inference attack")
    ev.add_argument("--lia-pairs", type=int, default=200)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True, help="report JSON path")

    ab = sub.add_parser("ablate", help="sweep one hyperparameter")
    ab.add_argument("--config", help="INI config for the base experiment")
    ab.add_argument("--param", required=True)
    ab.add_argument("--values", required=True, help="comma-separated sweep values")
    ab.add_argument("--out", required=True)

    selftest = sub.add_parser("selftest", help="gradient-check the full model")
    selftest.add_argument("--out", required=True, help="JSON report path")
    selftest.add_argument("--tol", type=float, default=1e-4)
    return parser


_TRAIN_OVERRIDES = ["method", "scope", "rounds", "local_epochs", "alpha", "k_neighbors",
                    "num_heads", "lambda_smooth", "mu_smooth", "hidden_dim",
                    "learning_rate", "sparsifier", "participation", "edge_flip", "seed"]


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for name in _TRAIN_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "data", None):
        overrides["data_source"] = "files"
        overrides["data_path"] = args.data
    return dataclasses.replace(cfg, **overrides)


def _cmd_gen_data(args) -> int:
    from .experiment import write_generated_bundles

    cfg = ExperimentConfig(nodes=args.nodes, classes=args.classes,
                           homophily=args.homophily, degree=args.degree,
                           feature_dim=args.feature_dim, separation=args.separation,
                           clients=args.clients, conflict=args.conflict, seed=args.seed)
    manifest = write_generated_bundles(cfg, args.out)
    homs = [round(c["edge_homophily"], 4) for c in manifest["clients"]]
    _say(f"wrote {len(manifest['clients'])} client bundles to {args.out} "
         f"(edge homophily per client: {homs})")
    return 0


def _cmd_partition(args) -> int:
    from .io import load_graph_bundle, save_assignment
    from .partition import balanced_partition, louvain, merge_small_communities

    g = load_graph_bundle(args.data)
    if args.method == "louvain":
        pa = louvain(g, args.seed)
        pa = merge_small_communities(g, pa, args.min_size, args.seed)
    else:
        pa = balanced_partition(g, args.clients, args.seed)
    save_assignment(pa.client_of, args.out)
    _say(f"{args.method} produced {pa.num_clients} clients "
         f"(sizes {sorted(pa.sizes().tolist(), reverse=True)}); wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .experiment import train_once

    cfg = _config_from_args(args)
    summary = train_once(cfg, cfg.seed, args.out)
    _say(f"method={cfg.method} scope={cfg.scope} rounds={cfg.rounds}: "
         f"final mean test accuracy {summary['final_test']:.4f} "
         f"(best-val-round {summary['best_val_round']}: {summary['best_val_test']:.4f})")
    _say(f"artifacts under {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .experiment import evaluate_checkpoints, write_curves_csv

    report = evaluate_checkpoints(args.checkpoints, args.data, lia=args.lia,
                                  lia_pairs=args.lia_pairs, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    metrics = Path(args.checkpoints) / "metrics.csv"
    if metrics.is_file():
        curves = Path(args.out).with_name("curves.csv")
        write_curves_csv(metrics, curves)
        _say(f"wrote convergence curves to {curves}")
    _say(f"mean test accuracy {report['mean_accuracy']:.4f}; report at {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    from .experiment import SWEEPABLE, ablate

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    raw = [v for v in args.values.split(",") if v != ""]
    if not raw:
        raise UsageError("--values must list at least one value")
    if args.param not in SWEEPABLE:
        raise UsageError(f"unknown sweep parameter {args.param!r}; valid: "
                         f"{sorted(SWEEPABLE)}")
    rows = ablate(cfg, args.param, raw, args.out)
    for row in rows:
        _say(f"{row['param']}={row['value']}: {row['mean']:.4f} +- {row['std']:.4f}")
    _say(f"sweep table at {Path(args.out) / 'sweep.csv'}")
    return 0


def _cmd_selftest(args) -> int:
    from .datagen import GeneratorConfig, generate_graph
    from .model import Hyperparams, full_model_grad_check, init_dual_params
    from .partition import five_group_split
    from .validation import derived_rng

    g = generate_graph(GeneratorConfig(num_nodes=12, num_classes=3, target_homophily=0.3,
                                       mean_degree=4, feature_dim=6, seed=7))
    split = five_group_split(g.num_nodes, derived_rng(3, 0))
    hp = Hyperparams(hidden_dim=8, k_neighbors=4)
    params = init_dual_params(g.feature_dim, g.num_classes, hp, seed=5)
    report = full_model_grad_check(g, split, params, hp, tol=args.tol)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    worst = max(b["max_rel_error"] for b in report["blocks"].values())
    _say(f"gradient check {'passed' if report['passed'] else 'FAILED'} "
         f"(worst block error {worst:.3e}, tol {args.tol}); report at {args.out}")
    return 0 if report["passed"] else 2


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "partition": _cmd_partition,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return 1
    except Exception as exc:  # runtime failures
        _say(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
