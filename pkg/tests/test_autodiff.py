import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdgc import autodiff as ad
from cdgc.autodiff import Tape, Variable, backward, classify, finite_difference_check, relative_error
from cdgc.checks import GRAD_TOL, operator_gradcheck, random_graph
from cdgc.errors import NumericError
from cdgc.graph import graph_adjacency

from strategies import alphas


def grads_of(f, leaves):
    with Tape() as tape:
        loss = f()
    return backward(loss, tape, leaves)


def test_quadratic_fd():
    w = Variable(np.array([1.0, 2.0]), True, "w")
    rep = finite_difference_check(lambda: ad.ad_sum(ad.mul(w, w)), [w], 1e-5)
    assert rep.max_error < 1e-8
    assert np.array_equal(grads_of(lambda: ad.ad_sum(ad.mul(w, w)), [w])[w], 2 * w.data)


def test_vanilla_sum_with_identity_weights(ntu, rng):
    adj = graph_adjacency(ntu)
    x = Variable(rng.normal(size=(2, 3, 2, 25)), True, "x")
    w = Variable(np.stack([np.eye(3)] * adj.num_subsets), False)
    g = grads_of(lambda: ad.ad_sum(ad.vanilla_gconv(x, adj, w)), [x])[x]
    colsum = adj.subsets.sum(axis=(0, 1))  # sum_k A_k^T 1
    np.testing.assert_allclose(g, np.broadcast_to(colsum, g.shape), rtol=1e-14)


def test_unused_leaf_gets_exact_zero():
    a = Variable(np.ones(3), True, "a")
    b = Variable(np.full(3, 7.0), True, "b")
    g = grads_of(lambda: ad.ad_sum(ad.mul(a, a)), [a, b])
    assert g[b].shape == (3,) and not g[b].any()


def test_non_scalar_loss_rejected():
    a = Variable(np.ones(3), True)
    with Tape() as tape:
        y = ad.mul(a, 2.0)
    with pytest.raises(ValueError):
        backward(y, tape)


def test_non_finite_perturbation_names_coordinate():
    w = Variable(np.array([1.0, 0.0]), True, "w")

    def f():
        # log blows up when w[1] goes negative
        return Variable(np.sum(w.data) + np.log(w.data[1] + 1e-300) if w.data[1] >= 0 else np.nan)

    with pytest.raises(NumericError, match=r"w\[1\]"):
        finite_difference_check(f, [w])


def test_h_must_be_positive():
    w = Variable(np.ones(1), True)
    with pytest.raises(ValueError):
        finite_difference_check(lambda: ad.ad_sum(w), [w], 0.0)


def test_ladder():
    assert classify(5e-7) == "pass"
    assert classify(5e-5) == "warn"
    assert classify(2e-4) == "fail"
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0 + 1e-9) < 1e-8


def test_relu_subgradient_at_zero():
    x = Variable(np.array([-1.0, 0.0, 2.0]), True)
    g = grads_of(lambda: ad.ad_sum(ad.relu(x)), [x])[x]
    assert g.tolist() == [0.0, 0.0, 1.0]


@pytest.mark.parametrize("seed", range(20))
def test_operator_gradcheck_seeds(seed):
    rep = operator_gradcheck(seed)
    assert rep.max_error < GRAD_TOL["operator"], (rep.worst_param, rep.max_error)
    assert any(k.endswith("alpha") for k in rep.per_param)


def test_alpha_gradient_on_vertex_constant_input(rng):
    g = random_graph(rng, 6, 1)
    adj = graph_adjacency(g)
    xv = np.broadcast_to(rng.normal(size=(1, 2, 2, 1)), (1, 2, 2, 6)).copy()
    x = Variable(xv, False)
    w = Variable(rng.normal(size=(adj.num_subsets, 2, 3)), False)
    a = Variable(np.array(0.4), True, "alpha")
    r = rng.normal(size=(1, 3, 2, 6))
    loss = lambda: ad.ad_sum(ad.mul(ad.cdgc_matrix(x, adj, w, a), r))
    da = grads_of(loss, [a])[a]
    # closed form: -sum (rowsum * X) W . r
    want = -sum(np.sum(np.einsum("nctv,cd->ndtv", xv * adj.rowsums[k][:, 0], w.data[k]) * r)
                for k in range(adj.num_subsets))
    assert math.isclose(float(da), want, rel_tol=1e-12)
    assert finite_difference_check(loss, [a]).max_error < 1e-6


@given(st.integers(0, 2**31))
def test_alpha_zero_weight_grad_equals_vanilla(seed):
    rng = np.random.default_rng(seed)
    adj = graph_adjacency(random_graph(rng, int(rng.integers(2, 10)), 2))
    V = adj.num_vertices
    x = Variable(rng.normal(size=(2, 3, 2, V)))
    w = Variable(rng.normal(size=(adj.num_subsets, 3, 4)), True, "w")
    r = rng.normal(size=(2, 4, 2, V))
    g0 = grads_of(lambda: ad.ad_sum(ad.mul(ad.cdgc_matrix(x, adj, w, 0.0), r)), [w])[w]
    g1 = grads_of(lambda: ad.ad_sum(ad.mul(ad.vanilla_gconv(x, adj, w), r)), [w])[w]
    assert np.array_equal(g0, g1)


@given(alphas, st.integers(0, 2**31))
def test_gradient_linearity(alpha, seed):
    rng = np.random.default_rng(seed)
    adj = graph_adjacency(random_graph(rng, int(rng.integers(2, 10)), 2))
    V = adj.num_vertices
    x = Variable(rng.normal(size=(1, 3, 2, V)), True, "x")
    w = Variable(rng.normal(size=(adj.num_subsets, 3, 2)), True, "w")
    r1, r2 = rng.normal(size=(2, 1, 2, 2, V))
    f = lambda: ad.ad_sum(ad.mul(ad.cdgc_matrix(x, adj, w, alpha), r1))
    g = lambda: ad.ad_sum(ad.mul(ad.ad_sum(ad.mul(ad.cdgc_matrix(x, adj, w, alpha), ad.cdgc_matrix(x, adj, w, alpha))), 0.5))
    both = lambda: ad.add(f(), g())
    gf, gg, gb = (grads_of(h, [x, w]) for h in (f, g, both))
    for leaf in (x, w):
        scale = max(1.0, np.abs(gb[leaf]).max())
        assert np.abs(gb[leaf] - (gf[leaf] + gg[leaf])).max() <= 1e-12 * scale


def test_eval_batchnorm_has_no_gradient_path():
    x = Variable(np.ones((2, 3, 2, 4)), True)
    gamma = Variable(np.ones(3), True)
    beta = Variable(np.zeros(3), True)
    with Tape() as tape:
        ad.batchnorm(x, gamma, beta, mean=np.zeros((1, 3, 1, 1)), var=np.ones((1, 3, 1, 1)))
    assert len(tape) == 0


def test_tape_visits_each_record_once():
    a = Variable(np.array(3.0), True)
    with Tape() as tape:
        b = ad.mul(a, a)
        c = ad.add(b, b)
        loss = ad.mul(c, 1.0)
    assert len(tape) == 3
    assert backward(loss, tape, [a])[a] == 12.0
