"""File formats: graph bundles, partition assignments, model block containers.

A graph bundle is a directory with ``edges.tsv`` (``u<TAB>v`` per line,
0-based ids, ``#`` comments), ``features.csv`` (row i = node i),
``labels.csv`` (one class id per line) and ``meta.json``
(num_nodes, num_classes, undirected).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import InputError
from .graph import Graph, build_graph
from .validation import require


def _parse_error(path, line_no: int, reason: str) -> InputError:
    return InputError(f"{path}:{line_no}: {reason}")


def read_edge_list(path) -> np.ndarray:
    """Parse a tab-separated edge file into an (E, 2) int array."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise _parse_error(path, line_no, f"expected 'u<TAB>v', got {raw.strip()!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise _parse_error(path, line_no, f"non-integer endpoint in {raw.strip()!r}") from None
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def read_feature_csv(path) -> np.ndarray:
    """Parse a CSV of real values, one node per row."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError:
                raise _parse_error(path, line_no, f"non-numeric value in {raw.strip()!r}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise _parse_error(path, line_no, f"expected {width} columns, got {len(row)}")
            rows.append(row)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width or 0)


def read_label_csv(path) -> np.ndarray:
    """Parse one integer class id per line."""
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise _parse_error(path, line_no, f"non-integer label {raw.strip()!r}") from None
    return np.asarray(labels, dtype=np.int64)


def load_graph_files(edge_path, feature_path, label_path,
                     undirected: bool = True, num_classes: int | None = None) -> Graph:
    """Build a Graph from the three flat files."""
    edges = read_edge_list(edge_path)
    features = read_feature_csv(feature_path)
    labels = read_label_csv(label_path)
    if features.shape[0] != labels.shape[0]:
        raise InputError(
            f"feature rows ({features.shape[0]}) != label count ({labels.shape[0]})")
    return build_graph(edges, features, labels, undirected=undirected, num_classes=num_classes)


def save_graph_bundle(g: Graph, directory) -> Path:
    """Write a graph bundle directory; returns its path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    src, dst = g.undirected_pairs()
    with open(out / "edges.tsv", "w", encoding="utf-8") as fh:
        for a, b in zip(src.tolist(), dst.tolist()):
            fh.write(f"{a}\t{b}\n")
    with open(out / "features.csv", "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(out / "labels.csv", "w", encoding="utf-8") as fh:
        for y in g.labels.tolist():
            fh.write(f"{y}\n")
    meta = {"num_nodes": g.num_nodes, "num_classes": g.num_classes, "undirected": g.undirected}
    (out / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return out


def load_graph_bundle(directory) -> Graph:
    """Read a graph bundle directory back into a Graph."""
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    g = load_graph_files(d / "edges.tsv", d / "features.csv", d / "labels.csv",
                         undirected=bool(meta["undirected"]),
                         num_classes=int(meta["num_classes"]))
    require(g.num_nodes == int(meta["num_nodes"]),
            f"meta.json says {meta['num_nodes']} nodes but files define {g.num_nodes}")
    return g


def save_assignment(client_of: np.ndarray, path) -> None:
    """Write a partition assignment as ``node_id,client_id`` CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_id,client_id\n")
        for node, client in enumerate(np.asarray(client_of).tolist()):
            fh.write(f"{node},{client}\n")


def load_assignment(path) -> np.ndarray:
    """Read a partition assignment CSV back into an int array."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line == "node_id,client_id":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise _parse_error(path, line_no, f"expected 'node_id,client_id', got {raw.strip()!r}")
            rows.append((int(parts[0]), int(parts[1])))
    out = np.zeros(len(rows), dtype=np.int64)
    for node, client in rows:
        if not 0 <= node < len(rows):
            raise InputError(f"{path}: node id {node} out of range for {len(rows)} rows")
        out[node] = client
    return out


_BLOCK_MAGIC = b"FGB1"


def save_blocks(blocks: dict[str, np.ndarray], path) -> None:
    """Write named float64 matrices to a self-describing binary container.

    Layout: magic, uint32 block count, then per block a uint16 name length,
    UTF-8 name, uint32 rows, uint32 cols and row-major little-endian float64
    values.
    """
    with open(path, "wb") as fh:
        fh.write(_BLOCK_MAGIC)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            mat = np.ascontiguousarray(arr, dtype=np.float64)
            require(mat.ndim == 2, f"block {name!r} must be 2-D")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
            fh.write(mat.astype("<f8").tobytes())


def load_blocks(path) -> dict[str, np.ndarray]:
    """Read a block container written by :func:`save_blocks`."""
    blocks: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BLOCK_MAGIC:
            raise InputError(f"{path}: not a block container (bad magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            data = fh.read(rows * cols * 8)
            if len(data) != rows * cols * 8:
                raise InputError(f"{path}: truncated block {name!r}")
            blocks[name] = np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return blocks
