"""Finite-difference verification of every op, layer and the full model.

Each component builds a small random instance (n <= 6, d <= 8) and compares
backpropagated gradients against central differences for the inputs and all
parameters. Backward passes are looked up through ``tensor.BACKWARD`` at call
time, so a corrupted entry shows up as a failing component.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import ExternalUnits, GEANet, SelfAttention, double_normalize, gea_forward, multi_head_gea
from .graph import FeatureSchema, TaskSpec, batch, random_graph
from .model import FFN, Embedding, GEAETLayer, GEAETModel, ModelConfig
from .mpnn import GatedGCNLayer, GCNLayer, GINELayer
from .nn import Module
from .posenc import PosEncConfig
from .tensor import (
    Tensor,
    add,
    check_parameters,
    col_softmax,
    concat_cols,
    div,
    gather_rows,
    grad_check,
    layer_norm,
    matmul,
    mul,
    relu,
    row_l1_normalize,
    row_log_softmax,
    row_softmax,
    scale,
    scatter_add_rows,
    segment_attention,
    sigmoid,
    slice_cols,
    sub,
    sum_all,
    transpose,
)

TOLERANCE = 1e-4


@dataclass
class Result:
    name: str
    error: float
    seconds: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < TOLERANCE


def _probe(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _contract(out: Tensor, weights: Tensor) -> Tensor:
    # random linear functional so every output entry carries a distinct weight
    return sum_all(mul(out, weights))


def _op_check(rng: np.random.Generator, fn: Callable[[Tensor], Tensor], shape) -> float:
    x = _probe(rng, shape)
    w = _probe(rng, fn(x).shape)
    return grad_check(lambda t: _contract(fn(t), w), x)


def _module_check(
    rng: np.random.Generator,
    module: Module,
    forward: Callable[[Tensor], Tensor],
    x: Tensor,
) -> float:
    """Max error over the input ``x`` and every parameter of ``module``."""
    w = _probe(rng, forward(x).shape)
    err = grad_check(lambda t: _contract(forward(t), w), x)
    params = module.parameters()
    if params:
        err = max(err, max(check_parameters(lambda: _contract(forward(x), w), params).values()))
    return err


def _small_batch(rng: np.random.Generator, d: int, sizes=(4, 3)):
    graphs = [random_graph(n, min(n, n * (n - 1) // 2), rng, node_dim=d, edge_dim=d) for n in sizes]
    return batch(graphs)


# ---------------------------------------------------------------------------
# op components


def _ops(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    n, d = 5, 4
    other = _probe(rng, (n, d))
    row = _probe(rng, (1, d))
    col = _probe(rng, (n, 1))
    positive = Tensor(np.abs(rng.normal(size=(n, d))) + 0.5)
    right = _probe(rng, (d, 3))
    offsets = np.array([0, 2, 5])
    idx = np.array([0, 3, 3, 1, 4, 0])

    def attn(t: Tensor) -> Tensor:
        q = slice_cols(t, 0, 4)
        return segment_attention(q, matmul(q, other_sq), t, offsets, 2)

    other_sq = _probe(rng, (d, d))
    return {
        "matmul": lambda: _op_check(rng, lambda t: matmul(t, right), (n, d)),
        "transpose": lambda: _op_check(rng, transpose, (n, d)),
        "add": lambda: _op_check(rng, lambda t: add(add(t, other), row), (n, d)),
        "sub": lambda: _op_check(rng, lambda t: sub(sub(other, t), col), (n, d)),
        "mul": lambda: _op_check(rng, lambda t: mul(mul(t, other), col), (n, d)),
        "div": lambda: _op_check(rng, lambda t: add(div(t, positive), div(other, add(mul(t, t), positive))), (n, d)),
        "relu": lambda: _op_check(rng, relu, (n, d)),
        "sigmoid": lambda: _op_check(rng, sigmoid, (n, d)),
        "scale": lambda: _op_check(rng, lambda t: scale(t, -1.7), (n, d)),
        "row_softmax": lambda: _op_check(rng, row_softmax, (n, d)),
        "col_softmax": lambda: _op_check(rng, lambda t: col_softmax(t, offsets), (n, d)),
        "row_log_softmax": lambda: _op_check(rng, row_log_softmax, (n, d)),
        "row_l1_normalize": lambda: _op_check(rng, lambda t: row_l1_normalize(add(mul(t, t), positive)), (n, d)),
        "layer_norm": lambda: _op_check(rng, layer_norm, (n, d)),
        "gather_rows": lambda: _op_check(rng, lambda t: gather_rows(t, idx), (n, d)),
        "scatter_add_rows": lambda: _op_check(rng, lambda t: scatter_add_rows(t, idx[:n], 6), (n, d)),
        "concat_slice": lambda: _op_check(rng, lambda t: concat_cols([slice_cols(t, 2, 4), t]), (n, d)),
        "segment_attention": lambda: _op_check(rng, attn, (n, d)),
    }


# ---------------------------------------------------------------------------
# layer components


def _layers(rng: np.random.Generator, seed: int) -> dict[str, Callable[[], float]]:
    d, units, heads = 8, 3, 2
    b = _small_batch(rng, d)
    x = _probe(rng, (b.n, d))
    e = _probe(rng, (b.m, d))
    wx = _probe(rng, (b.n, d))
    we = _probe(rng, (b.m, d))
    out: dict[str, Callable[[], float]] = {}

    def init(m: Module) -> Module:
        m.initialize(seed)
        return m

    def self_attention():
        m = init(SelfAttention(d, heads))
        return _module_check(rng, m, lambda t: m(t, b.node_offsets), x)

    def gea_single():
        m = init(ExternalUnits(d, units))
        return _module_check(rng, m, lambda t: gea_forward(t, m, "node", b.node_offsets), x)

    def double_norm():
        return _op_check(rng, lambda t: double_normalize(t, b.node_offsets), (b.n, units))

    out["self_attention"] = self_attention
    out["double_normalize"] = double_norm
    out["gea_single_head"] = gea_single

    for flags in itertools.product((True, False), repeat=3):
        tag = "".join(f[0] if on else "-" for f, on in zip(("node", "edge", "shared"), flags))

        def geanet_check(flags=flags):
            m = init(GEANet(d, units, heads, *flags))

            def fwd(t):
                # node and edge streams both depend on t so every toggle is exercised
                xs, es = m(t, add(e, gather_rows(t, b.src)), b.node_offsets, b.edge_offsets)
                return add(_contract(xs, wx), _contract(es, we))

            return _module_check(rng, m, fwd, x)

        out[f"geanet[{tag}]"] = geanet_check

    def multi_head():
        m = init(ExternalUnits(d, units))
        w = _probe(rng, (d, d))
        return _module_check(rng, m, lambda t: multi_head_gea(t, m, 4, b.edge_offsets, "edge", w), e)

    out["gea_multi_head"] = multi_head

    for name, cls in (("gcn", GCNLayer), ("gatedgcn", GatedGCNLayer), ("gine", GINELayer)):

        def mpnn_check(cls=cls):
            m = init(cls(d))

            def fwd(t):
                xs, es = m(t, add(e, gather_rows(t, b.dst)), b)
                return add(_contract(xs, wx), _contract(es, we))

            return _module_check(rng, m, fwd, x)

        out[name] = mpnn_check

    def embedding():
        schema = FeatureSchema(node_feat_dim=d, edge_feat_dim=d)
        m = init(Embedding(d, schema, PosEncConfig("rwpe", 3)))
        pe = rng.normal(size=(b.n, 3))

        def loss():
            xs, es = m(b, pe)
            return add(_contract(xs, wx), _contract(es, we))

        # inputs are raw arrays, so only parameters are checked here
        return max(check_parameters(loss, m.parameters()).values())

    def ffn():
        m = init(FFN(d))
        return _module_check(rng, m, m, x)

    def geaet_layer():
        cfg = ModelConfig(layers=1, dim=d, units=units, self_heads=heads, ext_heads=heads)
        m = init(GEAETLayer(cfg))

        def fwd(t):
            xs, es = m(t, e, b)
            return concat_cols([xs, gather_rows(es, np.arange(b.n) % b.m)])

        return _module_check(rng, m, fwd, x)

    out["embedding"] = embedding
    out["ffn"] = ffn
    out["geaet_layer"] = geaet_layer
    return out


def _model(rng: np.random.Generator, seed: int) -> dict[str, Callable[[], float]]:
    d = 4
    b = _small_batch(rng, 3, sizes=(4, 2))
    cfg = ModelConfig(
        layers=2, dim=d, units=2, self_heads=2, ext_heads=2, mpnn="gatedgcn", pe=PosEncConfig("rwpe", 2)
    )
    schema = FeatureSchema(node_feat_dim=3, edge_feat_dim=3)
    model = GEAETModel(cfg, schema, TaskSpec("node_classify", 2))
    model.initialize(seed)
    pe = rng.normal(size=(b.n, 2))

    def loss():
        logits = model(b, pe)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(b.n), b.target] = 1.0
        return scale(sum_all(mul(row_log_softmax(logits), Tensor(onehot))), -1.0 / b.n)

    return {"geaet_model": lambda: max(check_parameters(loss, model.parameters()).values())}


def components(seed: int = 0) -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(seed)
    return {**_ops(rng), **_layers(rng, seed), **_model(rng, seed)}


def run_suite(seed: int = 0, only: list[str] | None = None) -> list[Result]:
    results = []
    for name, check in components(seed).items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            err = float(check())
        except Exception:  # a broken backward may raise instead of returning garbage
            err = float("inf")
        results.append(Result(name, err, time.perf_counter() - t0))
    return results


def format_results(results: list[Result]) -> str:
    lines = [f"{'component':<24} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<24} {r.error:>12.3e}  {'ok' if r.ok else 'FAIL'}")
    bad = [r.name for r in results if not r.ok]
    lines.append(f"{len(results) - len(bad)}/{len(results)} components passed")
    if bad:
        lines.append("failed: " + ", ".join(bad))
    return "\n".join(lines)
