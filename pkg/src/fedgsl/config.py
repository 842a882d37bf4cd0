"""Flat INI experiment configs with exact round-tripping.

One section per pipeline stage; every field renders with ``repr`` so
``parse(render(cfg)) == cfg`` holds bit-for-bit, which is what makes the
config echo in a run directory sufficient to reproduce the run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .exceptions import InputError


@dataclass(frozen=True)
class ExperimentConfig:
    # [data]
    data_source: str = "generated"   # generated | files
    data_path: str = ""
    # [generator]
    nodes: int = 1000
    classes: int = 5
    homophily: float = 0.2
    degree: float = 10.0
    feature_dim: int = 16
    separation: float = 1.0
    clients: int = 4
    conflict: float = 1.0
    # [partition]  (applies when data_path holds one whole-graph bundle)
    partition_method: str = "none"   # none | louvain | balanced
    min_size: int = 50
    # [model]
    alpha: float = 0.2
    lambda_smooth: float = 0.1
    mu_smooth: float = 0.1
    k_neighbors: int = 20
    num_heads: int = 4
    num_layers: int = 2
    hidden_dim: int = 16
    learning_rate: float = 0.005
    sparsifier: str = "topk"
    # [train]
    method: str = "dual"             # dual | fedavg | local
    scope: str = "global"            # global | all | task | none
    rounds: int = 200
    local_epochs: int = 1
    participation: float = 1.0
    edge_flip: float = 0.0
    # [experiment]
    repeats: int = 5
    seed: int = 0
    seeds: tuple[int, ...] = ()      # explicit per-repeat seeds override

    def validate(self) -> None:
        if self.data_source not in ("generated", "files"):
            raise InputError(f"data.source must be generated or files, got {self.data_source!r}")
        if self.repeats < 1:
            raise InputError("experiment.repeats must be >= 1")
        if self.seeds and len(self.seeds) != self.repeats:
            raise InputError(f"got {len(self.seeds)} explicit seeds for "
                             f"{self.repeats} repeats")


_SECTIONS = {
    "data": [("source", "data_source"), ("path", "data_path")],
    "generator": [("nodes", "nodes"), ("classes", "classes"), ("homophily", "homophily"),
                  ("degree", "degree"), ("feature_dim", "feature_dim"),
                  ("separation", "separation"), ("clients", "clients"),
                  ("conflict", "conflict")],
    "partition": [("method", "partition_method"), ("min_size", "min_size")],
    "model": [("alpha", "alpha"), ("lambda", "lambda_smooth"), ("mu", "mu_smooth"),
              ("k", "k_neighbors"), ("heads", "num_heads"), ("layers", "num_layers"),
              ("hidden", "hidden_dim"), ("learning_rate", "learning_rate"),
              ("sparsifier", "sparsifier")],
    "train": [("method", "method"), ("scope", "scope"), ("rounds", "rounds"),
              ("local_epochs", "local_epochs"), ("participation", "participation"),
              ("edge_flip", "edge_flip")],
    "experiment": [("repeats", "repeats"), ("seed", "seed"), ("seeds", "seeds")],
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _render_value(value) -> str:
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(field: str, raw: str):
    kind = _FIELD_TYPES[field]
    if field == "seeds":
        return tuple(int(x) for x in raw.split()) if raw.strip() else ()
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def render_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, pairs in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key, field in pairs:
            lines.append(f"{key} = {_render_value(getattr(cfg, field))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"bad config: {exc}") from None
    values = {}
    for section, pairs in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        known = dict(pairs)
        for key in parser[section]:
            if key not in known:
                raise InputError(f"unknown config key [{section}] {key}")
            values[known[key]] = _parse_value(known[key], parser[section][key])
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))
