"""Minimal reverse-mode differentiation over dense matrices.

Just enough surface for the dual-channel model: dense matmuls, elementwise
ops, fixed-pattern sparse products with learnable entry weights, cosine rows,
masked cross-entropy, and a finite-difference gradient checker. Everything is
float64 and 2-D (scalars are 1x1 tensors).

Operations record themselves on the innermost active ``Tape`` whenever an
input requires gradients; without an active tape they just compute values,
which is the inference path. Tapes are tracked per thread so clients can
train in parallel without sharing state.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp

from .exceptions import InputError, NumericFaultError, ShapeError, UsageError

_tapes = threading.local()


def _tape_stack() -> list:
    if not hasattr(_tapes, "stack"):
        _tapes.stack = []
    return _tapes.stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """2-D float64 value with an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(values) -> Tensor:
    """Convenience constructor for a gradient-carrying leaf tensor."""
    return Tensor(np.array(values, dtype=np.float64, copy=True), requires_grad=True)


class _Node:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Recorded forward computation, replayed in reverse for gradients."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, name, inputs, output, backward_fn) -> None:
        output.tape = self
        self._nodes.append(_Node(name, inputs, output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad tensor feeding ``loss``.

        Gradients accumulate additively across fan-out; each recorded node is
        visited exactly once, in reverse order.
        """
        if loss.values.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise UsageError("backward on a tensor that was not recorded on this tape")
        acc: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        holders: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self._nodes):
            g_out = acc.get(id(node.output))
            if g_out is None:
                continue
            grads_in = node.backward_fn(g_out)
            for tensor, grad in zip(node.inputs, grads_in):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in acc:
                    acc[key] = acc[key] + grad
                else:
                    acc[key] = grad
                holders[key] = tensor
        for key, tensor in holders.items():
            if tensor.requires_grad:
                tensor.grad = acc[key]


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss tensor."""
    if loss.tape is None:
        raise UsageError("backward on a detached tensor (no recording tape)")
    loss.tape.backward(loss)


def _check_finite(name: str, values: np.ndarray) -> None:
    if not np.isfinite(values).all():
        raise NumericFaultError(f"{name} produced non-finite values")


def _finish(name: str, values: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    _check_finite(name, values)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(name, inputs, out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# dense primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        return g @ bv.T, av.T @ g

    return _finish("matmul", av @ bv, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def back(g):
        return g, g

    return _finish("add", a.values + b.values, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        return (g * c,)

    return _finish("scale", a.values * c, (a,), back)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a 1 x cols row to broadcast."""
    if a.shape != b.shape and not (
            (a.shape[0] == 1 or b.shape[0] == 1) and a.shape[1] == b.shape[1]):
        raise ShapeError(f"hadamard: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        ga = g * bv
        gb = g * av
        if a.shape[0] == 1 and g.shape[0] > 1:
            ga = ga.sum(axis=0, keepdims=True)
        if b.shape[0] == 1 and g.shape[0] > 1:
            gb = gb.sum(axis=0, keepdims=True)
        return ga, gb

    return _finish("hadamard", av * bv, (a, b), back)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def back(g):
        return (g * mask,)

    return _finish("relu", np.where(mask, a.values, 0.0), (a,), back)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols: inconsistent row counts {[t.shape for t in tensors]}")
    widths = [t.shape[1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, splits, axis=1))

    return _finish("concat_cols", np.concatenate([t.values for t in tensors], axis=1),
                   tuple(tensors), back)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def back(g):
        return (np.full(shape, float(g[0, 0])),)

    return _finish("sum_all", np.array([[a.values.sum()]]), (a,), back)


def frobenius_sq(a: Tensor) -> Tensor:
    """Sum of squared entries as a scalar tensor."""
    av = a.values

    def back(g):
        return (2.0 * float(g[0, 0]) * av,)

    return _finish("frobenius_sq", np.array([[np.sum(av * av)]]), (a,), back)


def row_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity of two equal-shape matrices, as a column.

    Rows where either vector is zero yield 0 (and zero gradients).
    """
    if a.shape != b.shape:
        raise ShapeError(f"row_cosine: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    na = np.sqrt(np.sum(av * av, axis=1, keepdims=True))
    nb = np.sqrt(np.sum(bv * bv, axis=1, keepdims=True))
    denom = na * nb
    ok = denom > 0
    dots = np.sum(av * bv, axis=1, keepdims=True)
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=ok)

    def back(g):
        # d cos / d a_i = b_i / (|a||b|) - cos * a_i / |a|^2, zero rows get zero
        inv = np.divide(g, denom, out=np.zeros_like(denom), where=ok)
        ca = np.divide(g * cos, na * na, out=np.zeros_like(denom), where=ok)
        cb = np.divide(g * cos, nb * nb, out=np.zeros_like(denom), where=ok)
        ga = inv * bv - ca * av
        gb = inv * av - cb * bv
        return ga, gb

    return _finish("row_cosine", cos, (a, b), back)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return _finish("softmax_rows", s, (a,), back)


def masked_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over masked rows, as a scalar tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n, c = logits.shape
    if labels.shape != (n,) or mask.shape != (n,):
        raise ShapeError(f"masked_cross_entropy: logits {logits.shape}, "
                         f"labels {labels.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise InputError("masked_cross_entropy needs a non-empty mask")
    lv = logits.values
    shifted = lv - lv.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logz
    picked = log_probs[np.arange(n), labels]
    loss = -picked[mask].mean()

    def back(g):
        soft = np.exp(log_probs)
        grad = soft.copy()
        grad[np.arange(n), labels] -= 1.0
        grad[~mask] = 0.0
        return (float(g[0, 0]) / count * grad,)

    return _finish("masked_cross_entropy", np.array([[loss]]), (logits,), back)


# ---------------------------------------------------------------------------
# sparse-structure primitives
# ---------------------------------------------------------------------------

class SparseOp:
    """Constant sparse row operator usable inside taped expressions."""

    def __init__(self, matrix: sp.spmatrix):
        self.mat = sp.csr_matrix(matrix)
        self.mat_t = sp.csr_matrix(self.mat.T)

    @property
    def shape(self):
        return self.mat.shape


def row_normalized_adjacency(graph) -> SparseOp:
    """D^-1 A as a constant operator; zero-degree rows stay zero."""
    src, dst = graph.edge_pairs()
    deg = graph.out_degrees().astype(np.float64)
    vals = np.where(deg[src] > 0, 1.0 / np.maximum(deg[src], 1.0), 0.0)
    mat = sp.csr_matrix((vals, (src, dst)), shape=(graph.num_nodes, graph.num_nodes))
    return SparseOp(mat)


def sparse_dense_matmul(s: SparseOp, d: Tensor) -> Tensor:
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"sparse_dense_matmul: {s.shape} @ {d.shape}")

    def back(g):
        return (s.mat_t @ g,)

    return _finish("sparse_dense_matmul", s.mat @ d.values, (d,), back)


class SparsePattern:
    """Fixed sparsity pattern whose entry weights are supplied per call.

    ``row_ids[e]`` and ``col_indices[e]`` give the (source, target) of entry
    ``e``; entries are grouped by source row. The pattern also precomputes
    scatter operators so gathers of node rows backpropagate at sparse-matmul
    speed.
    """

    def __init__(self, num_nodes: int, row_offsets: np.ndarray, col_indices: np.ndarray):
        self.num_nodes = int(num_nodes)
        self.row_offsets = np.asarray(row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(col_indices, dtype=np.int64)
        self.nnz = int(self.col_indices.shape[0])
        self.row_ids = np.repeat(np.arange(self.num_nodes, dtype=np.int64),
                                 np.diff(self.row_offsets))
        ones = np.ones(self.nnz)
        eids = np.arange(self.nnz)
        self._scatter_rows = sp.csr_matrix((ones, (self.row_ids, eids)),
                                           shape=(self.num_nodes, self.nnz))
        self._scatter_cols = sp.csr_matrix((ones, (self.col_indices, eids)),
                                           shape=(self.num_nodes, self.nnz))

    def _weight_matrix(self, w: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((w.ravel(), self.col_indices, self.row_offsets),
                             shape=(self.num_nodes, self.num_nodes))


def _check_entry_weights(name: str, pattern: SparsePattern, w: Tensor) -> None:
    if w.shape != (pattern.nnz, 1):
        raise ShapeError(f"{name}: weights must be ({pattern.nnz}, 1), got {w.shape}")


def gather_rows(a: Tensor, index: np.ndarray, scatter: sp.csr_matrix | None = None) -> Tensor:
    """Select rows ``a[index]``; duplicate indices accumulate in the backward.

    Pass a precomputed scatter matrix (as built by SparsePattern) to keep the
    backward pass off the slow ``np.add.at`` path.
    """
    index = np.asarray(index, dtype=np.int64)
    av = a.values
    n = av.shape[0]

    def back(g):
        if scatter is not None:
            return (scatter @ g,)
        out = np.zeros_like(av)
        np.add.at(out, index, g)
        return (out,)

    return _finish("gather_rows", av[index], (a,), back)


def sparse_row_normalize(pattern: SparsePattern, w: Tensor) -> Tensor:
    """Divide each entry by its row's total absolute weight.

    Signs are preserved; rows whose absolute mass is zero normalize to zero.
    """
    _check_entry_weights("sparse_row_normalize", pattern, w)
    wf = w.values.ravel()
    denom_row = np.bincount(pattern.row_ids, weights=np.abs(wf), minlength=pattern.num_nodes)
    denom = denom_row[pattern.row_ids]
    ok = denom > 0
    out = np.divide(wf, denom, out=np.zeros_like(wf), where=ok)

    def back(g):
        gf = g.ravel()
        s_row = np.bincount(pattern.row_ids, weights=gf * wf, minlength=pattern.num_nodes)
        s = s_row[pattern.row_ids]
        safe = np.where(ok, denom, 1.0)
        grad = np.where(ok, gf / safe - np.sign(wf) * s / (safe * safe), 0.0)
        return (grad.reshape(-1, 1),)

    return _finish("sparse_row_normalize", out.reshape(-1, 1), (w,), back)


def sparse_weighted_matmul(pattern: SparsePattern, w: Tensor, d: Tensor) -> Tensor:
    """Message passing out[u] = sum_e w_e * d[col_e] over the fixed pattern."""
    _check_entry_weights("sparse_weighted_matmul", pattern, w)
    if d.shape[0] != pattern.num_nodes:
        raise ShapeError(f"sparse_weighted_matmul: d has {d.shape[0]} rows, "
                         f"pattern has {pattern.num_nodes} nodes")
    mat = pattern._weight_matrix(w.values)
    dv = d.values

    def back(g):
        gw = np.sum(g[pattern.row_ids] * dv[pattern.col_indices], axis=1, keepdims=True)
        gd = mat.T @ g
        return gw, gd

    return _finish("sparse_weighted_matmul", mat @ dv, (w, d), back)


def weighted_feature_smoothness(w: Tensor, pattern: SparsePattern, features: np.ndarray) -> Tensor:
    """sum_e w_e * ||x_u - x_v||^2 over pattern entries, as a scalar tensor."""
    _check_entry_weights("weighted_feature_smoothness", pattern, w)
    diff = features[pattern.row_ids] - features[pattern.col_indices]
    d2 = np.sum(diff * diff, axis=1, keepdims=True)

    def back(g):
        return (float(g[0, 0]) * d2,)

    return _finish("weighted_feature_smoothness",
                   np.array([[float(w.values.ravel() @ d2.ravel())]]), (w,), back)


def multihead_pair_cosine(z: Tensor, src_heads: list[Tensor], dst_heads: list[Tensor],
                          pattern: SparsePattern) -> Tensor:
    """Mean over heads of cos(w_src . z_u, w_dst . z_v) for every pattern pair.

    Fused equivalent of hadamard + gather_rows + row_cosine per head: the
    numerator of head h is (z_u * z_v) . (w_src_h * w_dst_h) and the squared
    norms are (z_u^2) . (w_src_h^2), so one gather of z per endpoint and three
    small matmuls cover all heads at once. Pairs where either scaled vector is
    zero score 0 with zero gradients.
    """
    if len(src_heads) != len(dst_heads) or not src_heads:
        raise ShapeError("multihead_pair_cosine: need matching non-empty head lists")
    n_heads = len(src_heads)
    d = z.shape[1]
    for wt in (*src_heads, *dst_heads):
        if wt.shape != (1, d):
            raise ShapeError(f"multihead_pair_cosine: head shape {wt.shape}, expected (1, {d})")
    w_src = np.vstack([w.values for w in src_heads])          # (H, d)
    w_dst = np.vstack([w.values for w in dst_heads])
    zu = z.values[pattern.row_ids]                            # (nnz, d)
    zv = z.values[pattern.col_indices]
    prod = zu * zv
    squ = zu * zu
    sqv = zv * zv
    num = prod @ (w_src * w_dst).T                            # (nnz, H)
    asq = squ @ (w_src * w_src).T
    bsq = sqv @ (w_dst * w_dst).T
    denom = np.sqrt(asq * bsq)
    ok = denom > 0
    cos = np.divide(num, denom, out=np.zeros_like(num), where=ok)
    out = cos.mean(axis=1, keepdims=True)

    def back(g):
        gh = g / n_heads                                      # (nnz, 1) -> broadcast
        inv = np.divide(gh, denom, out=np.zeros_like(denom), where=ok)
        d_num = inv                                           # dL/dN
        d_asq = np.divide(-gh * cos, 2.0 * asq, out=np.zeros_like(asq), where=ok)
        d_bsq = np.divide(-gh * cos, 2.0 * bsq, out=np.zeros_like(bsq), where=ok)
        d_prod = d_num @ (w_src * w_dst)                      # (nnz, d)
        d_squ = d_asq @ (w_src * w_src)
        d_sqv = d_bsq @ (w_dst * w_dst)
        d_zu = d_prod * zv + 2.0 * d_squ * zu
        d_zv = d_prod * zu + 2.0 * d_sqv * zv
        d_z = pattern._scatter_rows @ d_zu + pattern._scatter_cols @ d_zv
        d_w12 = d_num.T @ prod                                # (H, d)
        d_w1s = d_asq.T @ squ
        d_w2s = d_bsq.T @ sqv
        grads = [d_z]
        for h in range(n_heads):
            grads.append((d_w12[h] * w_dst[h] + 2.0 * d_w1s[h] * w_src[h]).reshape(1, -1))
        for h in range(n_heads):
            grads.append((d_w12[h] * w_src[h] + 2.0 * d_w2s[h] * w_dst[h]).reshape(1, -1))
        return tuple(grads)

    return _finish("multihead_pair_cosine", out, (z, *src_heads, *dst_heads), back)


def straight_through_ones(w: Tensor) -> Tensor:
    """Replace entries by 1.0 in the forward pass, pass gradients through.

    Supports the strict-binary latent-graph mode, where message passing sees
    the 0/1 pattern but the entry scores still receive gradients.
    """
    def back(g):
        return (g,)

    return _finish("straight_through_ones", np.ones_like(w.values), (w,), back)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def _floored_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - f| / max(|a|, |f|, 1e-2).

    The magnitude floor keeps finite-difference noise on near-zero gradients
    from dominating the report.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(build_loss, params: dict[str, Tensor], fd_step: float = 1e-5,
               tol: float = 1e-4) -> dict:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must be a deterministic closure over ``params`` returning a
    scalar Tensor. Returns a report with per-parameter max relative errors and
    an overall pass flag.
    """
    probe_a = build_loss().item()
    probe_b = build_loss().item()
    if probe_a != probe_b:
        raise UsageError("build_loss is not deterministic: two forward passes disagree")

    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            analytic[name] = np.zeros_like(p.values)
        else:
            analytic[name] = p.grad.copy()

    report = {"fd_step": fd_step, "tol": tol, "blocks": {}, "passed": True}
    for name, p in params.items():
        numeric = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = build_loss().item()
            flat[i] = orig - fd_step
            down = build_loss().item()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * fd_step)
        err = _floored_rel_error(analytic[name], numeric)
        ok = err < tol
        report["blocks"][name] = {"max_rel_error": err, "passed": ok}
        report["passed"] = report["passed"] and ok
    return report
