import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geaet.graph import Graph, batch, random_graph
from geaet.mpnn import GATE_EPS, GatedGCNLayer, GCNLayer, GINELayer, gcn_operator, make_mpnn
from geaet.tensor import Tensor
from oracles import dense_gcn


def layer_norm_rows(h, gamma, beta, eps=1e-5):
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    return (h - mu) / np.sqrt(var + eps) * gamma + beta


def loop_gated_gcn(layer, x, e, edges):
    """Per-node loop over in-arcs."""
    A, B, C, U, V = (getattr(layer, k).data for k in "ABCUV")
    n, d = x.shape
    e_hat = np.array([x[t] @ A + x[s] @ B + e[k] @ C for k, (s, t) in enumerate(edges)]).reshape(-1, d)
    gate = 1 / (1 + np.exp(-e_hat))
    agg = np.zeros((n, d))
    for i in range(n):
        arcs = [k for k, (_, t) in enumerate(edges) if t == i]
        total = sum((gate[k] for k in arcs), np.zeros(d))
        for k in arcs:
            agg[i] += gate[k] / (total + GATE_EPS) * (x[edges[k][0]] @ V)
    nn_, en = layer.node_norm, layer.edge_norm
    x_new = x + np.maximum(layer_norm_rows(x @ U + agg, nn_.gamma.data, nn_.beta.data), 0)
    e_new = e + np.maximum(layer_norm_rows(e_hat, en.gamma.data, en.beta.data), 0) if len(edges) else e
    return x_new, e_new


def init(layer, seed):
    layer.initialize(seed)
    rng = np.random.default_rng(seed + 100)
    for _, p in layer.named_parameters():
        p.data = p.data + rng.normal(scale=0.1, size=p.shape)  # move biases and norms off their defaults
    return layer


class TestGCN:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31))
    def test_dense_oracle(self, n, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(n, int(rng.integers(0, n * (n - 1) // 2 + 1)), rng)
        layer = init(GCNLayer(3), seed % 1000)
        x = rng.normal(size=(n, 3))
        got = layer.propagate(Tensor(x), batch([g])).data
        want = dense_gcn(g.adjacency().astype(float), x, layer.W.data, layer.bias.data)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
        out, _ = layer(Tensor(x), None, batch([g]))
        np.testing.assert_array_equal(out.data, np.maximum(got, 0))

    def test_isolated_node_keeps_own_features(self):
        g = Graph(n=2, edges=[], target_kind="node", target=np.zeros(2), node_feat=np.zeros((2, 1)))
        op = gcn_operator(batch([g])).toarray()
        np.testing.assert_array_equal(op, np.eye(2))

    def test_operator_symmetric(self):
        g = random_graph(8, 12, np.random.default_rng(0))
        op = gcn_operator(batch([g])).toarray()
        np.testing.assert_allclose(op, op.T, atol=1e-15)
        assert np.max(np.abs(np.linalg.eigvalsh(op))) <= 1 + 1e-12

    def test_edges_pass_through(self):
        g = random_graph(4, 3, np.random.default_rng(1))
        e = Tensor(np.ones((g.m, 2)))
        _, e_out = GCNLayer(2)(Tensor(np.ones((4, 2))), e, batch([g]))
        assert e_out is e


class TestGatedGCN:
    @pytest.mark.parametrize("seed", range(6))
    def test_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(6, int(rng.integers(0, 16)), rng)
        layer = init(GatedGCNLayer(4), seed)
        x, e = rng.normal(size=(6, 4)), rng.normal(size=(g.m, 4))
        xo, eo = layer(Tensor(x), Tensor(e), batch([g]))
        wx, we = loop_gated_gcn(layer, x, e, g.edges.tolist())
        np.testing.assert_allclose(xo.data, wx, rtol=0, atol=1e-12)
        np.testing.assert_allclose(eo.data, we, rtol=0, atol=1e-12)

    def test_identical_edges_give_equal_gates(self):
        # star into node 0 where every arc sees the same x_i, C e and B x_j: gates are equal
        n, d = 4, 3
        g = Graph(n=n, edges=[(j, 0) for j in range(1, n)], target_kind="node", target=np.zeros(n),
                  node_feat=np.zeros((n, 1)))
        layer = init(GatedGCNLayer(d), 0)
        layer.B.data[:] = 0.0
        x = np.random.default_rng(0).normal(size=(n, d))
        e = np.ones((g.m, d))
        xo, _ = layer(Tensor(x), Tensor(e), batch([g]))
        s = 1 / (1 + np.exp(-(x[0] @ layer.A.data + e[0] @ layer.C.data)))
        k = n - 1
        agg = (s / (k * s + GATE_EPS)) * (x[1:] @ layer.V.data).sum(axis=0)
        h = x[0] @ layer.U.data + agg
        want = x[0] + np.maximum(layer_norm_rows(h[None], layer.node_norm.gamma.data, layer.node_norm.beta.data), 0)[0]
        np.testing.assert_allclose(xo.data[0], want, atol=1e-12)
        # mean aggregation up to the factor k s / (k s + eps)
        np.testing.assert_allclose(agg, (x[1:] @ layer.V.data).mean(axis=0) * (k * s / (k * s + GATE_EPS)), atol=1e-14)


class TestGINE:
    def test_edgeless_is_mlp(self):
        layer = init(GINELayer(3), 2)
        layer.eps.data[:] = 0.0
        g = Graph(n=3, edges=[], target_kind="node", target=np.zeros(3), node_feat=np.zeros((3, 1)))
        x = np.random.default_rng(0).normal(size=(3, 3))
        out, _ = layer(Tensor(x), Tensor(np.zeros((0, 3))), batch([g]))
        ref = np.maximum(x @ layer.lin1.W.data + layer.lin1.b.data, 0) @ layer.lin2.W.data + layer.lin2.b.data
        np.testing.assert_allclose(out.data, ref, atol=1e-14)

    def test_cancelled_message(self):
        layer = init(GINELayer(2), 3)
        g = Graph(n=2, edges=[(1, 0)], target_kind="node", target=np.zeros(2),
                  node_feat=np.zeros((2, 1)))
        x = np.array([[0.3, -0.2], [1.5, 2.0]])
        out, _ = layer(Tensor(x), Tensor(-x[[1]]), batch([g]))
        h0 = (1 + layer.eps.data[0, 0]) * x[0]
        ref = np.maximum(h0 @ layer.lin1.W.data + layer.lin1.b.data, 0) @ layer.lin2.W.data + layer.lin2.b.data
        np.testing.assert_allclose(out.data[0], ref[0], atol=1e-14)

    @pytest.mark.parametrize("seed", range(4))
    def test_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(5, int(rng.integers(0, 11)), rng)
        layer = init(GINELayer(3), seed)
        x, e = rng.normal(size=(5, 3)), rng.normal(size=(g.m, 3))
        h = (1 + layer.eps.data[0, 0]) * x
        for k, (s, t) in enumerate(g.edges.tolist()):
            h[t] += np.maximum(x[s] + e[k], 0)
        ref = np.maximum(h @ layer.lin1.W.data + layer.lin1.b.data, 0) @ layer.lin2.W.data + layer.lin2.b.data
        out, e_out = layer(Tensor(x), Tensor(e), batch([g]))
        np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(e_out.data, e)


def test_make_mpnn_unknown():
    with pytest.raises(ValueError, match="unknown mpnn"):
        make_mpnn("gat", 4)
