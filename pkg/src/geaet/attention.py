"""Self-attention and graph external attention (GEA) blocks.

GEA scores each node (or edge) row against a small set of learnable
external memory rows that are shared by every graph the model sees.
Scores are double-normalised: a softmax down each memory column within the
graph, then an L1 normalisation across memories for each row.
"""

from __future__ import annotations

import numpy as np

from .nn import LayerNorm, Module
from .tensor import (
    ShapeError,
    Tensor,
    add,
    col_softmax,
    concat_cols,
    matmul,
    row_l1_normalize,
    segment_attention,
    slice_cols,
    transpose,
)

ROW_EPS = 1e-12


def single_segment(n: int) -> np.ndarray:
    return np.array([0, n], dtype=np.int64)


def double_normalize(scores: Tensor, offsets=None) -> Tensor:
    """Column softmax per graph segment, then per-row L1 normalisation."""
    if offsets is None:
        offsets = single_segment(scores.rows)
    return row_l1_normalize(col_softmax(scores, offsets), ROW_EPS)


class ExternalUnits(Module):
    """Learnable memories shared across all input graphs.

    ``shared`` (d x d) links the node and edge streams; ``node_key``,
    ``node_value``, ``edge_key`` and ``edge_value`` are S x d. A disabled
    shared unit acts as the identity; disabled node or edge units switch the
    corresponding GEANet stream off.
    """

    def __init__(
        self,
        dim: int,
        units: int,
        use_node_units: bool = True,
        use_edge_units: bool = True,
        use_shared_unit: bool = True,
    ) -> None:
        super().__init__()
        self.dim = dim
        self.units = units
        self.use_node_units = use_node_units
        self.use_edge_units = use_edge_units
        self.use_shared_unit = use_shared_unit
        if use_shared_unit:
            self.param("shared", (dim, dim), "glorot")
        if use_node_units:
            self.param("node_key", (units, dim), "normal")
            self.param("node_value", (units, dim), "normal")
        if use_edge_units:
            self.param("edge_key", (units, dim), "normal")
            self.param("edge_value", (units, dim), "normal")

    def key_value(self, which: str) -> tuple[Tensor, Tensor]:
        if which == "node":
            if not self.use_node_units:
                raise ValueError("node units are disabled")
            return self.node_key, self.node_value
        if which == "edge":
            if not self.use_edge_units:
                raise ValueError("edge units are disabled")
            return self.edge_key, self.edge_value
        raise ValueError(f"which must be 'node' or 'edge', got {which!r}")

    def project(self, x: Tensor) -> Tensor:
        return matmul(x, self.shared) if self.use_shared_unit else x


def gea_forward(x: Tensor, units: ExternalUnits, which: str = "node", offsets=None) -> Tensor:
    """Single-head GEA: ``double_normalize(X U_s U_k^T) U_v``."""
    if x.cols != units.dim:
        raise ShapeError(f"gea_forward: input width {x.cols} != unit width {units.dim}")
    key, value = units.key_value(which)
    scores = matmul(units.project(x), transpose(key))
    return matmul(double_normalize(scores, offsets), value)


def multi_head_gea(
    x: Tensor,
    units: ExternalUnits,
    heads: int,
    offsets=None,
    which: str = "node",
    w_out: Tensor | None = None,
    record: list | None = None,
) -> Tensor:
    """Multi-head GEA with memories shared between heads.

    ``U_s`` is applied once to the full-width input; head ``i`` then uses
    column block ``i`` (width d / heads) of the projected input and of the
    key and value memories. Head outputs are concatenated and multiplied by
    ``w_out`` (identity when ``None``). Each head's attention matrix is
    appended to ``record`` when given.
    """
    d = units.dim
    if x.cols != d:
        raise ShapeError(f"multi_head_gea: input width {x.cols} != unit width {d}")
    if d % heads:
        raise ShapeError(f"multi_head_gea: width {d} not divisible by {heads} heads")
    key, value = units.key_value(which)
    z = units.project(x)
    dh = d // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        if heads == 1:
            zh, kh, vh = z, key, value
        else:
            zh, kh, vh = slice_cols(z, lo, hi), slice_cols(key, lo, hi), slice_cols(value, lo, hi)
        attn = double_normalize(matmul(zh, transpose(kh)), offsets)
        if record is not None:
            record.append(attn.data.copy())
        outs.append(matmul(attn, vh))
    out = outs[0] if heads == 1 else concat_cols(outs)
    return out if w_out is None else matmul(out, w_out)


class GEANet(Module):
    """GEA with skip connections on both the node and the edge stream."""

    def __init__(
        self,
        dim: int,
        units: int,
        heads: int,
        use_node_units: bool = True,
        use_edge_units: bool = True,
        use_shared_unit: bool = True,
    ) -> None:
        super().__init__()
        if dim % heads:
            raise ValueError(f"hidden width {dim} not divisible by {heads} external heads")
        self.heads = heads
        self.units = ExternalUnits(dim, units, use_node_units, use_edge_units, use_shared_unit)
        if use_node_units:
            self.param("node_out", (dim, dim), "identity_noise")
        if use_edge_units:
            self.param("edge_out", (dim, dim), "identity_noise")

    def node_stream(self, x: Tensor, offsets=None, record: list | None = None) -> Tensor:
        if not self.units.use_node_units:
            return x
        return add(x, multi_head_gea(x, self.units, self.heads, offsets, "node", self.node_out, record))

    def edge_stream(self, e: Tensor, offsets=None) -> Tensor:
        if not self.units.use_edge_units:
            return e
        return add(e, multi_head_gea(e, self.units, self.heads, offsets, "edge", self.edge_out))

    def __call__(self, x: Tensor, e: Tensor, node_offsets=None, edge_offsets=None, record=None):
        return self.node_stream(x, node_offsets, record), self.edge_stream(e, edge_offsets)


class SelfAttention(Module):
    """Multi-head softmax attention over the nodes of each graph."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        if dim % heads:
            raise ValueError(f"hidden width {dim} not divisible by {heads} self-attention heads")
        self.heads = heads
        self.param("W_Q", (dim, dim), "glorot")
        self.param("W_K", (dim, dim), "glorot")
        self.param("W_V", (dim, dim), "glorot")
        self.param("W_O", (dim, dim), "identity_noise")

    def __call__(self, x: Tensor, offsets=None, record: list | None = None) -> Tensor:
        if offsets is None:
            offsets = single_segment(x.rows)
        q, k, v = matmul(x, self.W_Q), matmul(x, self.W_K), matmul(x, self.W_V)
        return matmul(segment_attention(q, k, v, offsets, self.heads, record), self.W_O)


class TransformerLayer(Module):
    """``layer_norm(X + MHSA(X))``; the feed-forward part lives in the GEAET layer."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.attn = SelfAttention(dim, heads)
        self.norm = LayerNorm(dim)

    def __call__(self, x: Tensor, offsets=None, record: list | None = None) -> Tensor:
        return self.norm(add(x, self.attn(x, offsets, record)))

