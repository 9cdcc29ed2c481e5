"""Autodiff correctness: per-op finite-difference checks and fixed examples."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import quantext.tensor as T

TOL = 1e-3


def leaf(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def rand(rng, *shape):
    return leaf(rng.standard_normal(shape))


def check(build, leaves, eps=1e-4):
    err = T.check_gradients(build, leaves, eps=eps)
    assert err <= TOL, f"worst relative error {err}"


# ----------------------------------------------------------- op gradchecks

def test_grad_elementwise_chain():
    rng = np.random.default_rng(0)
    a, b = rand(rng, 3, 4), rand(rng, 3, 4)
    check(lambda: ((a * b + a - b) / (b * b + 2.0)).sum(), [a, b])


def test_grad_broadcast_add_mul():
    rng = np.random.default_rng(1)
    a, b = rand(rng, 3, 4), rand(rng, 4)
    check(lambda: (a * b + b).sum(), [a, b])


def test_grad_rsub_neg_scalar_ops():
    rng = np.random.default_rng(2)
    a = rand(rng, 5)
    check(lambda: (2.0 - (-a) * 3.0).sum(), [a])


def test_grad_sqrt():
    rng = np.random.default_rng(3)
    a = leaf(rng.uniform(0.5, 2.0, (4, 3)))
    check(lambda: a.sqrt().sum(), [a])


def test_grad_relu_away_from_kink():
    rng = np.random.default_rng(4)
    vals = rng.standard_normal((4, 4))
    vals[np.abs(vals) < 0.05] = 0.5
    a = leaf(vals)
    check(lambda: (a.relu() * a).sum(), [a])


def test_grad_reshape_mean_sum_axes():
    rng = np.random.default_rng(5)
    a = rand(rng, 2, 3, 4)
    check(lambda: a.reshape(6, 4).sum(axis=1).mean(), [a])
    check(lambda: a.sum(axis=(0, 2), keepdims=True).sum(), [a])
    check(lambda: a.mean(axis=1).sum(), [a])


def test_grad_matmul_affine():
    rng = np.random.default_rng(6)
    x, w, b = rand(rng, 5, 3), rand(rng, 3, 4), rand(rng, 4)
    check(lambda: (x @ w).sum(), [x, w])
    check(lambda: T.affine(x, w, b).sum(), [x, w, b])


def test_grad_concat():
    rng = np.random.default_rng(7)
    a, b = rand(rng, 2, 3), rand(rng, 2, 5)
    check(lambda: T.concat([a, b], axis=1).sum(), [a, b])


def test_grad_softmax():
    rng = np.random.default_rng(8)
    a = rand(rng, 3, 5)
    w = np.arange(15, dtype=np.float64).reshape(3, 5)
    check(lambda: (a.softmax(axis=-1) * T.Tensor(w)).sum(), [a])


def test_grad_embed():
    rng = np.random.default_rng(9)
    table = rand(rng, 6, 4)
    ids = np.array([1, 3, 1, 0])
    w = np.linspace(0.5, 2.0, 16).reshape(4, 4)
    check(lambda: (T.embed(table, ids) * T.Tensor(w)).sum(), [table])


def test_grad_conv1d():
    rng = np.random.default_rng(10)
    x, w, b = rand(rng, 2, 6, 3), rand(rng, 3, 3, 2), rand(rng, 2)
    def build():
        y = T.conv1d(x, w, b)
        return (y * y).sum()
    check(build, [x, w, b])


def test_grad_conv2d():
    rng = np.random.default_rng(11)
    x, w, b = rand(rng, 1, 4, 5, 2), rand(rng, 3, 3, 2, 3), rand(rng, 3)
    check(lambda: (T.conv2d(x, w, b).relu()).sum(), [x, w, b])


def test_grad_maxpool_distinct_values():
    x = leaf(np.array([[[0.1], [0.9], [0.4], [0.7], [0.2]]]))
    check(lambda: (T.maxpool1d(x, 2) * T.Tensor(np.array([[[1.0], [2.0], [3.0]]]))).sum(),
          [x])


def test_grad_span_outer():
    rng = np.random.default_rng(12)
    s, e = rand(rng, 1, 5, 3), rand(rng, 1, 5, 3)
    w = np.linspace(-1, 1, 75).reshape(1, 5, 5, 3)
    check(lambda: (T.span_outer(s, e) * T.Tensor(w)).sum(), [s, e])


def test_grad_cross_entropy_with_weights_and_mask():
    rng = np.random.default_rng(13)
    logits = rand(rng, 6, 3)
    targets = np.array([0, 1, 2, 1, 0, 2])
    weights = np.array([1.0, 2.0, 1.0, 0.5, 3.0, 1.0])
    mask = np.array([1.0, 1.0, 0.0, 1.0, 1.0, 1.0])
    check(lambda: T.cross_entropy(logits.softmax(axis=-1), targets,
                                  weights=weights, mask=mask), [logits])


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 6), c=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_grad_small_network_property(n, c, seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 1, n, c)
    w = rand(rng, 3, c, 2)
    b = rand(rng, 2)
    targets = np.zeros((1, -(-n // 2)), dtype=np.int64)
    def build():
        h = T.conv1d(x, w, b).relu()
        h = T.maxpool1d(h, 2)
        return T.cross_entropy(h.softmax(axis=-1), targets)
    check(build, [x, w, b])


# ------------------------------------------------------------- fixed cases

def test_softmax_example():
    x = T.Tensor(np.array([0.0, math.log(3.0)]))
    got = x.softmax(axis=-1).data
    np.testing.assert_allclose(got, [0.25, 0.75], atol=1e-6)


def test_cross_entropy_uniform_example():
    probs = T.Tensor(np.full((1, 4), 0.25))
    loss = T.cross_entropy(probs, np.array([2]))
    assert abs(loss.item() - math.log(4.0)) < 1e-6


def test_cross_entropy_rejects_bad_index():
    probs = T.Tensor(np.full((2, 3), 1 / 3))
    with pytest.raises(IndexError):
        T.cross_entropy(probs, np.array([0, 3]))


def test_cross_entropy_rejects_fully_masked():
    probs = T.Tensor(np.full((2, 3), 1 / 3))
    with pytest.raises(ValueError):
        T.cross_entropy(probs, np.array([0, 1]), mask=np.zeros(2))


def test_embed_accumulates_repeated_ids():
    table = leaf(np.zeros((5, 4)))
    out = T.embed(table, np.array([1, 1]))
    out.backward(np.ones((2, 4)))
    np.testing.assert_array_equal(table.grad[1], [2, 2, 2, 2])
    assert table.grad[0].sum() == 0 and table.grad[2:].sum() == 0


def test_embed_identity_table_example():
    table = T.Tensor(np.eye(3))
    out = T.embed(table, np.array([2, 0]))
    np.testing.assert_array_equal(out.data, [[0, 0, 1], [1, 0, 0]])


def test_embed_empty_ids():
    table = T.Tensor(np.eye(3))
    assert T.embed(table, np.array([], dtype=np.int64)).shape == (0, 3)


def test_embed_rejects_out_of_range():
    table = T.Tensor(np.eye(3))
    with pytest.raises(IndexError):
        T.embed(table, np.array([3]))


def test_maxpool_tie_routes_gradient_to_first():
    x = leaf(np.array([[[1.0], [1.0]]]))
    y = T.maxpool1d(x, 2)
    y.backward(np.ones_like(y.data))
    np.testing.assert_array_equal(x.grad[0, :, 0], [1.0, 0.0])


def test_repeated_use_accumulates():
    x = leaf(np.array([3.0]))
    y = (x * x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, [6.0])


def test_no_grad_suppresses_graph():
    x = leaf(np.array([1.0, 2.0]))
    with T.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert T.grad_enabled()


def test_backward_products_are_finite():
    rng = np.random.default_rng(14)
    x = rand(rng, 4, 4)
    loss = (x.softmax(axis=-1) * x).sum()
    loss.backward()
    assert np.isfinite(x.grad).all()


def test_dropout_eval_is_identity_train_scales():
    rng = np.random.default_rng(15)
    x = T.Tensor(np.ones((200, 10), dtype=np.float32))
    out_eval = T.dropout(x, 0.4, rng, training=False)
    np.testing.assert_array_equal(out_eval.data, x.data)
    out_train = T.dropout(x, 0.4, rng, training=True)
    kept = out_train.data[out_train.data > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.6, rtol=1e-6)
    assert abs(out_train.data.mean() - 1.0) < 0.05


def test_matmul_shape_error():
    a = T.Tensor(np.ones((2, 3)))
    b = T.Tensor(np.ones((4, 2)))
    with pytest.raises(ValueError):
        a @ b


def test_conv1d_rejects_even_width():
    x = T.Tensor(np.ones((1, 4, 2)))
    w = T.Tensor(np.ones((2, 2, 2)))
    b = T.Tensor(np.zeros(2))
    with pytest.raises(ValueError):
        T.conv1d(x, w, b)


def test_maxpool_rejects_bad_window():
    x = T.Tensor(np.ones((1, 4, 2)))
    with pytest.raises(ValueError):
        T.maxpool1d(x, 0)


# ---------------------------------------------------------------- optimizer

def test_adam_first_step_hand_computed():
    p = T.Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([0.5], dtype=np.float32)
    opt = T.Adam([p], lr=0.1)
    opt.step()
    # bias-corrected m=0.5, v=0.25 -> update = lr * 0.5/(0.5+eps) = lr
    np.testing.assert_allclose(p.data, [0.9], atol=1e-6)
    assert opt.step_count == 1


def test_adam_minimizes_quadratic():
    x = T.Tensor(np.array([5.0]), requires_grad=True)
    opt = T.Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        loss = ((x - 3.0) * (x - 3.0)).sum()
        loss.backward()
        opt.step()
    assert abs(float(x.data[0]) - 3.0) < 1e-2


def test_adam_rejects_nonfinite_gradient():
    p = T.Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([np.nan])
    opt = T.Adam([p])
    with pytest.raises(ValueError):
        opt.step()


def test_adam_zero_grad_clears():
    p = T.Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([2.0])
    T.Adam([p]).zero_grad()
    assert p.grad is None
