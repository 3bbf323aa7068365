"""Layers and graph kernels built on the autodiff core.

Graph arguments are duck-typed: anything exposing ``num_nodes``,
``indptr``, ``indices``, ``edge_targets()`` and ``operator(kind, dtype)``
works. Adjacency is symmetric with no self-loops unless a builder says
otherwise, and a node with an empty neighborhood receives a zero message
from every aggregation op.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, NumericError
from .tensor import Tensor, check_finite

__all__ = [
    "ForwardContext", "BatchNormUpdate", "Linear", "BatchNorm", "dropout",
    "neighbor_mean", "gcn_propagate", "attention_coefficients", "attention_apply",
    "segment_sum", "segment_max",
]

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass
class BatchNormUpdate:
    """One running-stat update; consumed by the leakage audit."""
    layer: str
    epoch: int
    n_rows: int
    max_timestep: int

    def to_dict(self) -> dict:
        return {"layer": self.layer, "epoch": self.epoch,
                "n_rows": self.n_rows, "max_timestep": self.max_timestep}


@dataclass
class ForwardContext:
    """Per-forward state: mode, stochasticity, and audit bookkeeping.

    ``max_timestep`` describes the node rows this forward touches; batch
    norm stamps it into its update log so the audit can tell whether any
    running statistic ever saw a test-period row.
    """
    mode: str = "eval"
    rng: Optional[np.random.Generator] = None
    epoch: int = -1
    max_timestep: int = -1
    bn_log: Optional[list] = None

    @property
    def training(self) -> bool:
        return self.mode == "train"


class Linear:
    def __init__(self, in_dim: int, out_dim: int, name: str = "linear"):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(np.zeros((in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def init(self, rng: np.random.Generator, dtype=np.float64) -> None:
        bound = 1.0 / np.sqrt(self.in_dim)
        self.weight.data = rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim)).astype(dtype)
        self.bias.data = np.zeros(self.out_dim, dtype=dtype)

    def params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        return (x @ self.weight) + self.bias


class BatchNorm:
    """Column-wise batch normalization with logged running-stat updates.

    Training mode normalizes by batch statistics (population variance)
    and moves the running estimates by ``BN_MOMENTUM``; eval mode uses the
    running estimates and never writes them.
    """

    def __init__(self, dim: int, name: str = "bn"):
        self.name = name
        self.dim = dim
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def init(self, rng: np.random.Generator, dtype=np.float64) -> None:
        self.gamma.data = np.ones(self.dim, dtype=dtype)
        self.beta.data = np.zeros(self.dim, dtype=dtype)
        self.running_mean = np.zeros(self.dim, dtype=dtype)
        self.running_var = np.ones(self.dim, dtype=dtype)

    def params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]

    def state(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.running_mean = state[f"{self.name}.running_mean"].copy()
        self.running_var = state[f"{self.name}.running_var"].copy()

    def __call__(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        if ctx.training:
            n = x.data.shape[0]
            if n < 2:
                raise NumericError(f"{self.name}: batch of {n} row(s) has no usable variance")
            mean = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mean
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var
            if ctx.bn_log is not None:
                ctx.bn_log.append(BatchNormUpdate(self.name, ctx.epoch, n, ctx.max_timestep))
        else:
            mean = self.running_mean
            var = self.running_var

        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x.data - mean) * inv_std
        out = Tensor(xhat * self.gamma.data + self.beta.data)
        out.requires_grad = x.requires_grad or self.gamma.requires_grad
        parents = [p for p in (x, self.gamma, self.beta) if p.requires_grad]
        out._parents = tuple(parents)
        gamma, beta, training = self.gamma, self.beta, ctx.training

        def backward() -> None:
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=0))
            if x.requires_grad:
                gx_hat = g * gamma.data
                if training:
                    n = x.data.shape[0]
                    # Batch stats depend on x; fold their gradients back in.
                    dvar = (gx_hat * (x.data - mean)).sum(axis=0) * (-0.5) * inv_std ** 3
                    dmean = (-gx_hat * inv_std).sum(axis=0) + dvar * (-2.0 / n) * (x.data - mean).sum(axis=0)
                    gx = gx_hat * inv_std + dvar * 2.0 * (x.data - mean) / n + dmean / n
                else:
                    gx = gx_hat * inv_std
                x.accumulate(gx.astype(x.data.dtype))

        out._backward = backward
        return out


def dropout(x: Tensor, p: float, ctx: ForwardContext) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale kept units by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate {p} outside [0, 1)")
    if not ctx.training or p == 0.0:
        return x
    if ctx.rng is None:
        raise ConfigError("training-mode dropout needs an rng in the forward context")
    keep = (ctx.rng.random(x.data.shape) >= p)
    scale_val = np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    mask = keep.astype(x.data.dtype) * scale_val
    out = Tensor(x.data * mask)
    out.requires_grad = x.requires_grad
    out._parents = (x,) if x.requires_grad else ()

    def backward() -> None:
        if x.requires_grad:
            x.accumulate(out.grad * mask)

    out._backward = backward
    return out


def _graph_op(x: Tensor, forward_op, backward_op) -> Tensor:
    out = Tensor(forward_op @ x.data)
    out.requires_grad = x.requires_grad
    out._parents = (x,) if x.requires_grad else ()

    def backward() -> None:
        if x.requires_grad:
            x.accumulate(backward_op @ out.grad)

    out._backward = backward
    return out


def neighbor_mean(x: Tensor, graph) -> Tensor:
    """Row v becomes the mean of its neighbors' rows; empty rows become zero."""
    dtype = x.data.dtype
    return _graph_op(x, graph.operator("mean", dtype), graph.operator("mean_t", dtype))


def gcn_propagate(x: Tensor, graph) -> Tensor:
    """Symmetric-normalized propagation with transient self-loops.

    With A~ = A + I and D~ its degree matrix, applies D~^-1/2 A~ D~^-1/2.
    The operator is symmetric, so the backward pass reuses it.
    """
    op = graph.operator("gcn", x.data.dtype)
    return _graph_op(x, op, op)


def segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Per-row sums of edge-aligned values under a CSR row layout."""
    n = len(indptr) - 1
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    nonempty = indptr[:-1] < indptr[1:]
    if values.shape[0]:
        # reduceat segments end at the next listed offset, so passing only
        # non-empty row starts yields exactly the per-row reductions.
        out[nonempty] = np.add.reduceat(values, indptr[:-1][nonempty], axis=0)
    return out


def segment_max(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    n = len(indptr) - 1
    out = np.full((n,) + values.shape[1:], -np.inf, dtype=values.dtype)
    nonempty = indptr[:-1] < indptr[1:]
    if values.shape[0]:
        out[nonempty] = np.maximum.reduceat(values, indptr[:-1][nonempty], axis=0)
    return out


def attention_coefficients(proj: Tensor, att: Tensor, graph, slope: float = 0.2) -> Tensor:
    """Per-edge attention weights, one column per head.

    ``proj`` is (N, heads*head_dim); ``att`` is (heads, 2*head_dim) laid out
    as [target half | source half]. Edge e = (v <- u) scores
    LeakyReLU(a_tgt . proj[v] + a_src . proj[u]) and is normalized by
    softmax over v's neighborhood. Rows sum to 1 per head before any
    dropout downstream.
    """
    heads, two_dh = att.data.shape
    head_dim = two_dh // 2
    if proj.data.shape[1] != heads * head_dim:
        raise ConfigError(
            f"projection width {proj.data.shape[1]} != heads*head_dim {heads * head_dim}")
    n = graph.num_nodes
    indptr = graph.indptr
    edge_src = graph.indices
    edge_dst = graph.edge_targets()

    proj3 = proj.data.reshape(n, heads, head_dim)
    a_tgt = att.data[:, :head_dim]
    a_src = att.data[:, head_dim:]
    tgt_term = np.einsum("nhd,hd->nh", proj3, a_tgt)
    src_term = np.einsum("nhd,hd->nh", proj3, a_src)
    raw = tgt_term[edge_dst] + src_term[edge_src]
    check_finite(raw, "attention scores")
    scores = np.where(raw > 0, raw, slope * raw)

    row_max = segment_max(scores, indptr)
    shifted = scores - row_max[edge_dst]
    expv = np.exp(shifted)
    denom = segment_sum(expv, indptr)
    alpha_data = expv / denom[edge_dst]

    out = Tensor(alpha_data)
    out.requires_grad = proj.requires_grad or att.requires_grad
    out._parents = tuple(p for p in (proj, att) if p.requires_grad)

    def backward() -> None:
        d_alpha = out.grad
        row_dot = segment_sum(alpha_data * d_alpha, indptr)
        d_scores = alpha_data * (d_alpha - row_dot[edge_dst])
        d_raw = d_scores * np.where(raw > 0, 1.0, slope)
        d_tgt_term = np.empty_like(tgt_term)
        d_src_term = np.empty_like(src_term)
        for h in range(heads):
            d_tgt_term[:, h] = np.bincount(edge_dst, weights=d_raw[:, h], minlength=n)
            d_src_term[:, h] = np.bincount(edge_src, weights=d_raw[:, h], minlength=n)
        d_tgt_term = d_tgt_term.astype(proj.data.dtype)
        d_src_term = d_src_term.astype(proj.data.dtype)
        if proj.requires_grad:
            d_proj3 = d_tgt_term[:, :, None] * a_tgt[None] + d_src_term[:, :, None] * a_src[None]
            proj.accumulate(d_proj3.reshape(n, heads * head_dim))
        if att.requires_grad:
            d_a_tgt = np.einsum("nh,nhd->hd", d_tgt_term, proj3)
            d_a_src = np.einsum("nh,nhd->hd", d_src_term, proj3)
            att.accumulate(np.concatenate([d_a_tgt, d_a_src], axis=1))

    out._backward = backward
    return out


_EDGE_CHUNK = 1 << 17


def attention_apply(alpha: Tensor, proj: Tensor, graph) -> Tensor:
    """Aggregate projected neighbor rows with per-edge weights, per head."""
    from scipy import sparse

    n = graph.num_nodes
    indptr = graph.indptr
    edge_src = graph.indices
    edge_dst = graph.edge_targets()
    heads = alpha.data.shape[1]
    head_dim = proj.data.shape[1] // heads
    proj3 = proj.data.reshape(n, heads, head_dim)

    mats = [sparse.csr_matrix((alpha.data[:, h], edge_src, indptr), shape=(n, n))
            for h in range(heads)]
    out_data = np.empty((n, heads, head_dim), dtype=proj.data.dtype)
    for h in range(heads):
        out_data[:, h, :] = mats[h] @ proj3[:, h, :]

    out = Tensor(out_data.reshape(n, heads * head_dim))
    out.requires_grad = alpha.requires_grad or proj.requires_grad
    out._parents = tuple(p for p in (alpha, proj) if p.requires_grad)

    def backward() -> None:
        g3 = out.grad.reshape(n, heads, head_dim)
        if alpha.requires_grad:
            d_alpha = np.empty_like(alpha.data)
            for start in range(0, len(edge_src), _EDGE_CHUNK):
                sl = slice(start, start + _EDGE_CHUNK)
                d_alpha[sl] = np.einsum("ehd,ehd->eh", g3[edge_dst[sl]], proj3[edge_src[sl]])
            alpha.accumulate(d_alpha)
        if proj.requires_grad:
            d_proj3 = np.empty_like(proj3)
            for h in range(heads):
                d_proj3[:, h, :] = mats[h].T @ g3[:, h, :]
            proj.accumulate(d_proj3.reshape(n, heads * head_dim))

    out._backward = backward
    return out
