import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geaet.graph import Graph, random_graph
from geaet.posenc import (
    PosEncConfig,
    attach_pe,
    canonical_signs,
    lap_pe,
    normalized_laplacian,
    positional_encoding,
    random_sign_flip,
    rwpe,
    sym_eig,
)
from oracles import dense_walk_powers, walk_return_probabilities


def undirected(n, pairs):
    arcs = [(i, j) for i, j in pairs] + [(j, i) for i, j in pairs]
    return Graph(n=n, edges=arcs, target_kind="node", target=np.zeros(n), node_feat=np.zeros((n, 1)))


class TestSymEig:
    def test_identity(self):
        w, _ = sym_eig(np.eye(3))
        np.testing.assert_allclose(w, [1, 1, 1])

    def test_swap_matrix(self):
        w, _ = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(w, [-1, 1], atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_reconstruction(self, seed):
        b = np.random.default_rng(seed).normal(size=(8, 8))
        a = b + b.T
        w, v = sym_eig(a)
        assert np.max(np.abs(v @ np.diag(w) @ v.T - a)) < 1e-8
        assert np.max(np.abs(v.T @ v - np.eye(8))) < 1e-8
        assert np.max(np.abs(a @ v - v * w)) < 1e-8
        assert np.all(np.diff(w) >= 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(0, 2**31))
    def test_matches_reference_spectrum(self, n, seed):
        b = np.random.default_rng(seed).normal(size=(n, n))
        a = b + b.T
        w, _ = sym_eig(a)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-9)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestLapPE:
    def test_two_node_path(self):
        pe = lap_pe(undirected(2, [(0, 1)]), 1)
        np.testing.assert_allclose(pe[:, 0], [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-12)
        w, _ = sym_eig(normalized_laplacian(undirected(2, [(0, 1)])))
        np.testing.assert_allclose(w, [0, 2], atol=1e-12)

    def test_two_triangles_multiplicity(self):
        g = undirected(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
        w, v = sym_eig(normalized_laplacian(g))
        np.testing.assert_allclose(w[:2], 0, atol=1e-12)
        lap = normalized_laplacian(g)
        col = lap_pe(g, 1)[:, 0]
        np.testing.assert_allclose(lap @ col, 0 * col, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_orthonormal_and_canonical(self, seed):
        g = random_graph(9, 14, np.random.default_rng(seed))
        pe = lap_pe(g, 5)
        np.testing.assert_allclose(pe.T @ pe, np.eye(5), atol=1e-8)
        for j in range(5):
            mag = np.abs(pe[:, j])
            i = np.nonzero(mag >= mag.max() - 1e-10)[0][0]  # near-ties resolve to the lowest index
            assert pe[i, j] > 0

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            lap_pe(undirected(3, [(0, 1)]), 3)

    def test_permutation_simple_spectrum(self):
        g = undirected(5, [(0, 1), (1, 2), (2, 3), (1, 4)])
        w, _ = sym_eig(normalized_laplacian(g))
        assert np.min(np.diff(w)) > 1e-6
        order = np.array([3, 0, 4, 1, 2])
        np.testing.assert_allclose(lap_pe(g.permute(order), 4), lap_pe(g, 4)[order], atol=1e-9)

    def test_isolated_node(self):
        g = undirected(4, [(0, 1), (1, 2)])
        lap = normalized_laplacian(g)
        assert lap[3, 3] == 1.0 and np.all(lap[3, :3] == 0)

    def test_sign_canonical_tie_goes_low(self):
        v = np.array([[-0.5], [0.5]])
        np.testing.assert_array_equal(canonical_signs(v), [[0.5], [-0.5]])

    def test_random_flip_keeps_magnitude(self):
        pe = np.arange(12.0).reshape(4, 3) + 1
        flipped = random_sign_flip(pe, np.random.default_rng(0))
        np.testing.assert_array_equal(np.abs(flipped), pe)
        assert set(np.sign(flipped / pe).ravel()) <= {-1.0, 1.0}

    def test_small_graphs_are_zero_padded(self):
        g = undirected(2, [(0, 1)])
        out = positional_encoding(g, PosEncConfig("lappe", 4))
        assert out.shape == (2, 4) and np.all(out[:, 1:] == 0)


class TestRWPE:
    def test_triangle(self):
        pe = rwpe(undirected(3, [(0, 1), (1, 2), (0, 2)]), 3)
        np.testing.assert_allclose(pe, np.tile([0, 0.5, 0.25], (3, 1)), atol=1e-15)

    def test_single_edge(self):
        np.testing.assert_allclose(rwpe(undirected(2, [(0, 1)]), 2), [[0, 1], [0, 1]])

    def test_no_edges(self):
        assert np.all(rwpe(undirected(4, []), 3) == 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 13))
        g = random_graph(n, int(rng.integers(0, n * (n - 1) // 2 + 1)), rng)
        np.testing.assert_allclose(rwpe(g, 6), walk_return_probabilities(g, 6), atol=1e-10)
        np.testing.assert_allclose(rwpe(g, 6), dense_walk_powers(g, 6), atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31))
    def test_equivariant_and_bounded(self, n, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(n, int(rng.integers(0, n * (n - 1) // 2 + 1)), rng)
        order = rng.permutation(n)
        pe = rwpe(g, 5)
        # equal up to the summation order of the dense products
        np.testing.assert_allclose(rwpe(g.permute(order), 5), pe[order], rtol=0, atol=1e-14)
        assert np.all(pe >= 0) and np.all(pe <= 1 + 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        PosEncConfig("spectral").validate()
    with pytest.raises(ValueError):
        PosEncConfig("rwpe", 0).validate()
    PosEncConfig("none", 0).validate()


def test_attach():
    graphs = [random_graph(5, 4, np.random.default_rng(i)) for i in range(3)]
    attach_pe(graphs, PosEncConfig("rwpe", 4))
    assert all(g.pe.shape == (5, 4) for g in graphs)
    attach_pe(graphs, PosEncConfig("none"))
    assert all(g.pe is None for g in graphs)
