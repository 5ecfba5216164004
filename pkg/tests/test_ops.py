import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdgc.errors import DimensionError
from cdgc.graph import PartitionedAdjacency, build_graph, graph_adjacency, partition
from cdgc.ops import (CdgcLayerParams, accelerated_cdgc, cdgc_matrix, cdgc_naive, gradient_antisymmetry_probe,
                      spatial_shift, spatial_unshift, vanilla_gconv)

from strategies import alphas, connected_graphs


def two_node():
    """2-node graph with a single subset A = [[0, 1], [1, 0]]."""
    g = build_graph(2, [(0, 1)], 0)
    a = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    adj = PartitionedAdjacency(g, {(0, 1): 0, (1, 0): 0}, a, a.sum(axis=2, keepdims=True), g.center_distance)
    return g, adj


def frame(values):
    """(V, C) frame -> (1, C, 1, V) feature map."""
    return np.asarray(values, dtype=np.float64).T[None, :, None, :]


def unframe(x):
    return x[0, :, 0, :].T


def eq1_oracle(x, adj, W):
    """Per-vertex sum over subsets and neighbors: y_i = sum_k sum_j A_k[i, j] W_k^T x_j."""
    N, C, T, V = x.shape
    y = np.zeros((N, W.shape[2], T, V))
    for k in range(adj.num_subsets):
        for i in range(V):
            for j in range(V):
                if adj.subsets[k, i, j]:
                    y[:, :, :, i] += adj.subsets[k, i, j] * np.einsum("nct,cd->ndt", x[:, :, :, j], W[k])
    return y


def test_vanilla_identity_adjacency(rng):
    g = build_graph(4, [], 0)
    eye = np.eye(4)[None]
    adj = PartitionedAdjacency(g, {(i, i): 0 for i in range(4)}, eye, eye.sum(axis=2, keepdims=True), np.zeros(4))
    x = rng.normal(size=(2, 3, 2, 4))
    W = np.eye(3)[None]
    assert np.array_equal(vanilla_gconv(x, adj, CdgcLayerParams(W, 0.0)), x)


def test_vanilla_two_node():
    _, adj = two_node()
    y = vanilla_gconv(frame([[2.0], [5.0]]), adj, CdgcLayerParams(np.eye(1)[None], 0.0))
    assert unframe(y).ravel().tolist() == [5.0, 2.0]


@given(connected_graphs(max_vertices=10), st.integers(0, 2**31))
def test_vanilla_matches_eq1_loop(g, seed):
    r = np.random.default_rng(seed)
    adj = graph_adjacency(g)
    x = r.normal(size=(2, 3, 2, g.num_vertices))
    p = CdgcLayerParams.init(3, 4, rng=r)
    y = vanilla_gconv(x, adj, p)
    np.testing.assert_allclose(y, eq1_oracle(x, adj, p.weights), rtol=1e-10, atol=1e-12)


def test_naive_two_node_alpha_one():
    g, adj = two_node()
    y = cdgc_naive(frame([[2.0], [5.0]]), g, adj.labeling, CdgcLayerParams(np.eye(1)[None], 1.0))
    assert unframe(y).ravel().tolist() == [3.0, -3.0]


def test_constant_input_nullspace(ntu, rng):
    adj = graph_adjacency(ntu)
    x = np.broadcast_to(rng.normal(size=(2, 4, 3, 1)), (2, 4, 3, 25)).copy()
    p = CdgcLayerParams.init(4, 5, alpha=1.0, rng=rng)
    # the loop subtracts before aggregating: exactly zero
    assert not cdgc_naive(x, ntu, adj.labeling, p).any()
    # the matrix form cancels A X against the row-sum term after rounding; zero up to a few ulp
    y = cdgc_matrix(x, adj, p)
    scale = np.abs(x).max() * np.abs(p.weights).sum(axis=(0, 1)).max()
    assert np.abs(y).max() <= 8 * np.finfo(float).eps * scale
    # shift of a vertex-constant map is itself: exactly zero
    acc = CdgcLayerParams(rng.normal(size=(4, 5)), 1.0, np.ones((25, 4)))
    assert not accelerated_cdgc(x, acc).any()


@given(connected_graphs(), alphas, st.integers(0, 2**31))
def test_matrix_equals_naive(g, alpha, seed):
    r = np.random.default_rng(seed)
    cin = int(r.integers(1, 9))
    x = r.normal(size=(int(r.integers(1, 3)), cin, int(r.integers(1, 4)), g.num_vertices))
    p = CdgcLayerParams.init(cin, int(r.integers(1, 9)), alpha=alpha, rng=r)
    got = cdgc_matrix(x, graph_adjacency(g), p)
    want = cdgc_naive(x, g, partition(g), p)
    assert np.max(np.abs(got - want)) <= 1e-10 * max(np.max(np.abs(want)), 1e-300)


@given(connected_graphs(), st.integers(0, 2**31))
def test_alpha_zero_reduces_to_vanilla(g, seed):
    r = np.random.default_rng(seed)
    adj = graph_adjacency(g)
    x = r.normal(size=(2, 3, 2, g.num_vertices))
    p = CdgcLayerParams.init(3, 4, alpha=0.0, rng=r)
    v = vanilla_gconv(x, adj, p)
    assert np.array_equal(cdgc_matrix(x, adj, p), v)
    np.testing.assert_allclose(cdgc_naive(x, g, adj.labeling, p), v, rtol=0, atol=1e-12 * max(1, np.abs(v).max()))


@given(connected_graphs(max_vertices=12), alphas, st.integers(0, 2**31))
def test_operators_are_linear(g, alpha, seed):
    r = np.random.default_rng(seed)
    adj = graph_adjacency(g)
    V = g.num_vertices
    x, y = r.normal(size=(2, 1, 3, 2, V))
    a, b = r.normal(size=2)
    p = CdgcLayerParams.init(3, 2, alpha=alpha, rng=r)
    acc = CdgcLayerParams(r.normal(size=(3, 2)), alpha, r.normal(size=(V, 3)))
    ops = [lambda z: vanilla_gconv(z, adj, p), lambda z: cdgc_matrix(z, adj, p),
           lambda z: cdgc_naive(z, g, adj.labeling, p), lambda z: accelerated_cdgc(z, acc)]
    for op in ops:
        lhs = op(a * x + b * y)
        rhs = a * op(x) + b * op(y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_spatial_shift_example():
    x = frame([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert unframe(spatial_shift(x)).tolist() == [[1, 5, 9], [4, 8, 3], [7, 2, 6]]


def test_spatial_shift_single_channel(rng):
    x = rng.normal(size=(2, 1, 3, 7))
    assert np.array_equal(spatial_shift(x), x)


@given(st.integers(1, 3), st.integers(1, 40), st.integers(1, 3), st.integers(1, 25), st.integers(0, 2**31))
def test_spatial_shift_is_a_permutation(N, C, T, V, seed):
    x = np.random.default_rng(seed).normal(size=(N, C, T, V))
    s = spatial_shift(x)
    assert np.array_equal(np.sort(s, axis=3), np.sort(x, axis=3))
    assert np.array_equal(spatial_unshift(s), x)
    for c in range(C):
        for i in range(V):
            assert np.array_equal(s[:, c, :, i], x[:, c, :, (i + c) % V])


def test_accelerated_alpha_zero_is_shift_conv(rng):
    x = rng.normal(size=(2, 4, 3, 6))
    w = rng.normal(size=(4, 5))
    y = accelerated_cdgc(x, CdgcLayerParams(w, 0.0, np.ones((6, 4))))
    np.testing.assert_allclose(y, np.einsum("nctv,cd->ndtv", spatial_shift(x), w), rtol=1e-12)


def test_accelerated_difference_example():
    x = frame([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    y = accelerated_cdgc(x, CdgcLayerParams(np.eye(3), 1.0, np.ones((3, 3))))
    assert unframe(y).tolist() == [[0, 3, 6], [0, 3, -3], [0, -6, -3]]


def test_accelerated_mask_is_elementwise(rng):
    x = rng.normal(size=(1, 3, 2, 4))
    m = rng.normal(size=(4, 3))
    y = accelerated_cdgc(x, CdgcLayerParams(np.eye(3), 0.3, m))
    d = spatial_shift(x) - 0.3 * x
    for c in range(3):
        for v in range(4):
            np.testing.assert_allclose(y[:, c, :, v], d[:, c, :, v] * m[v, c], rtol=1e-14)


def test_shape_errors(ntu, rng):
    adj = graph_adjacency(ntu)
    p = CdgcLayerParams.init(3, 4, rng=rng)
    with pytest.raises(DimensionError):
        cdgc_matrix(np.ones((1, 3, 2, 24)), adj, p)
    with pytest.raises(DimensionError):
        vanilla_gconv(np.ones((1, 2, 2, 25)), adj, p)
    with pytest.raises(DimensionError):
        accelerated_cdgc(np.ones((1, 3, 2, 25)), CdgcLayerParams(np.ones((3, 4)), 0.3, np.ones((24, 3))))
    with pytest.raises(DimensionError):
        accelerated_cdgc(np.ones((1, 3, 2, 25)), p)


def test_alpha_range():
    with pytest.raises(ValueError):
        CdgcLayerParams(np.ones((1, 2, 2)), 1.5)


def test_antisymmetry_probe_all_ntu_pairs(ntu, rng):
    x = rng.normal(size=(2, 3, 4, 25))
    for i, j in sorted(ntu.edges):
        a, b = gradient_antisymmetry_probe(x, ntu, i, j)
        assert np.array_equal(a, -b)
        c, d = gradient_antisymmetry_probe(x, ntu, j, i)
        assert np.array_equal(c, b) and np.array_equal(d, a)


def test_antisymmetry_probe_equal_features_and_errors(ntu):
    x = np.ones((1, 3, 2, 25))
    a, b = gradient_antisymmetry_probe(x, ntu, 0, 1)
    assert not a.any() and not b.any()
    with pytest.raises(ValueError):
        gradient_antisymmetry_probe(x, ntu, 0, 24)


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 4))
def test_cdgc_adds_no_parameters(cin, cout, K):
    w = np.zeros((K, cin, cout))
    assert CdgcLayerParams(w, 0.3).param_count() == CdgcLayerParams(w, 0.0).param_count() == K * cin * cout
