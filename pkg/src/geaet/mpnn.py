"""Message-passing layers: GCN, GatedGCN and GINE.

All layers aggregate over in-arcs; undirected graphs store both arc
orientations so this is ordinary neighbourhood aggregation. Every layer
maps ``(X, E, batch) -> (X', E')``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import Batch
from .nn import LayerNorm, Linear, Module
from .tensor import (
    Tensor,
    add,
    div,
    gather_rows,
    matmul,
    mul,
    relu,
    scatter_add_rows,
    sigmoid,
    spmm,
)

GATE_EPS = 1e-6


def gcn_operator(b: Batch) -> sp.csr_matrix:
    """Sparse ``D^-1/2 (A + I) D^-1/2`` where D counts in-arcs plus the self loop.

    Entry (i, j) weights the message from j to i.
    """
    deg = b.in_degree + 1.0
    inv = 1.0 / np.sqrt(deg)
    loops = np.arange(b.n)
    rows = np.concatenate([b.dst, loops])
    cols = np.concatenate([b.src, loops])
    vals = inv[rows] * inv[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(b.n, b.n))


class GCNLayer(Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.param("W", (dim, dim), "glorot")
        self.param("bias", (1, dim), "zeros")

    def propagate(self, x: Tensor, b: Batch) -> Tensor:
        """Pre-activation ``D^-1/2 (A + I) D^-1/2 X W + bias``."""
        return add(spmm(gcn_operator(b), matmul(x, self.W)), self.bias)

    def __call__(self, x: Tensor, e: Tensor | None, b: Batch):
        return relu(self.propagate(x, b)), e


class GatedGCNLayer(Module):
    """Residual gated graph convolution with edge-feature updates.

    For arc ``j -> i``: ``e_hat = A x_i + B x_j + C e_ij`` and
    ``e_ij' = e_ij + relu(LN(e_hat))``. Gates ``sigmoid(e_hat)`` are
    normalised over the in-arcs of ``i`` and weight ``V x_j`` in
    ``x_i' = x_i + relu(LN(U x_i + sum_j gate_ij * V x_j))``.
    """

    def __init__(self, dim: int) -> None:
        super().__init__()
        for name in ("A", "B", "C", "U", "V"):
            self.param(name, (dim, dim), "glorot")
        self.node_norm = LayerNorm(dim)
        self.edge_norm = LayerNorm(dim)

    def __call__(self, x: Tensor, e: Tensor, b: Batch):
        ax, bx, vx = matmul(x, self.A), matmul(x, self.B), matmul(x, self.V)
        e_hat = add(add(gather_rows(ax, b.dst), gather_rows(bx, b.src)), matmul(e, self.C))
        gate = sigmoid(e_hat)
        denom = scatter_add_rows(gate, b.dst, b.n)
        eta = div(gate, add(gather_rows(denom, b.dst), Tensor([[GATE_EPS]])))
        agg = scatter_add_rows(mul(eta, gather_rows(vx, b.src)), b.dst, b.n)
        x_new = add(x, relu(self.node_norm(add(matmul(x, self.U), agg))))
        e_new = add(e, relu(self.edge_norm(e_hat)))
        return x_new, e_new


class GINELayer(Module):
    """``x_i' = MLP((1 + eps) x_i + sum_j relu(x_j + e_ji))``."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.param("eps", (1, 1), "zeros")
        self.lin1 = Linear(dim, dim)
        self.lin2 = Linear(dim, dim)

    def __call__(self, x: Tensor, e: Tensor, b: Batch):
        msgs = relu(add(gather_rows(x, b.src), e))
        agg = scatter_add_rows(msgs, b.dst, b.n)
        h = add(mul(x, add(self.eps, Tensor([[1.0]]))), agg)
        return self.lin2(relu(self.lin1(h))), e


MPNN_KINDS = {"gcn": GCNLayer, "gatedgcn": GatedGCNLayer, "gine": GINELayer}
EDGE_AWARE_MPNNS = ("gatedgcn", "gine")


def make_mpnn(kind: str, dim: int) -> Module:
    try:
        return MPNN_KINDS[kind](dim)
    except KeyError:
        raise ValueError(f"unknown mpnn kind {kind!r}; expected one of {sorted(MPNN_KINDS)}") from None

