"""Gradient checks for every reverse-mode op against central differences."""

import numpy as np

import hoptrace.autodiff as ad
from hoptrace.autodiff import Tensor

from oracles import gradcheck


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_broadcast(rng):
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4)
    gradcheck(lambda: ad.sum_((a + b) * (a + b)), [a, b])


def test_mul_broadcast(rng):
    a = leaf(rng, 2, 5)
    b = leaf(rng, 1, 5)
    gradcheck(lambda: ad.sum_(a * b + a), [a, b])


def test_scalar_arithmetic(rng):
    a = leaf(rng, 6)
    gradcheck(lambda: ad.sum_(2.0 * a - 0.5 + a / 3.0), [a])


def test_rsub_and_neg(rng):
    a = leaf(rng, 4)
    gradcheck(lambda: ad.sum_((1.0 - a) * (-a)), [a])


def test_div(rng):
    a = leaf(rng, 5)
    b = Tensor(rng.random(5) + 1.5, requires_grad=True)
    gradcheck(lambda: ad.sum_(a / b), [a, b])


def test_exp_log(rng):
    a = Tensor(rng.random(7) + 0.5, requires_grad=True)
    gradcheck(lambda: ad.sum_(ad.log(ad.exp(a) + 1.0)), [a])


def test_tanh(rng):
    a = leaf(rng, 3, 3)
    gradcheck(lambda: ad.sum_(ad.tanh(a) * a), [a])


def test_sigmoid(rng):
    a = leaf(rng, 8)
    gradcheck(lambda: ad.sum_(ad.sigmoid(a) * a), [a])


def test_relu(rng):
    # keep entries away from the kink, finite differences lie there
    data = rng.standard_normal(20)
    data[np.abs(data) < 0.05] = 0.5
    a = Tensor(data, requires_grad=True)
    gradcheck(lambda: ad.sum_(ad.relu(a) * a), [a])


def test_matmul(rng):
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4, 2)
    gradcheck(lambda: ad.sum_(a @ b), [a, b])


def test_matvec(rng):
    a = leaf(rng, 5, 3)
    v = leaf(rng, 3)
    gradcheck(lambda: ad.sum_((a @ v) * (a @ v)), [a, v])


def test_sum_axis_keepdims(rng):
    a = leaf(rng, 2, 3, 4)
    gradcheck(lambda: ad.sum_(ad.sum_(a, axis=1, keepdims=True) * a), [a])


def test_sum_axis_dropdims(rng):
    a = leaf(rng, 4, 3)
    gradcheck(lambda: ad.sum_(ad.sum_(a, axis=0) * ad.sum_(a, axis=0)), [a])


def test_mean(rng):
    a = leaf(rng, 6)
    gradcheck(lambda: ad.mean(a * a), [a])


def test_softmax_rows(rng):
    a = leaf(rng, 3, 5)
    w = Tensor(rng.standard_normal((3, 5)))
    gradcheck(lambda: ad.sum_(ad.softmax(a) * w), [a])


def test_softmax_matches_dense_jacobian(rng):
    x = rng.standard_normal(6)
    a = Tensor(x, requires_grad=True)
    g = rng.standard_normal(6)
    out = ad.softmax(a)
    (out * Tensor(g)).sum().backward()
    s = np.exp(x - x.max())
    s /= s.sum()
    jac = np.diag(s) - np.outer(s, s)
    np.testing.assert_allclose(a.grad, jac @ g, atol=1e-12)


def test_reshape(rng):
    a = leaf(rng, 6)
    gradcheck(lambda: ad.sum_(ad.reshape(a, (2, 3)) * ad.reshape(a, (2, 3))), [a])


def test_take_basic_row(rng):
    a = leaf(rng, 4, 3)
    gradcheck(lambda: ad.sum_(a[1] * a[1]), [a])


def test_take_advanced_repeated_indices(rng):
    # same row gathered twice: adjoints must accumulate, not overwrite
    a = leaf(rng, 5, 2)
    idx = np.array([1, 3, 1, 1])
    out = ad.take(a, idx)
    ad.sum_(out).backward()
    expected = np.zeros((5, 2))
    np.add.at(expected, idx, 1.0)
    np.testing.assert_allclose(a.grad, expected)


def test_take_gradcheck(rng):
    a = leaf(rng, 6)
    idx = np.array([0, 2, 2, 5])
    gradcheck(lambda: ad.sum_(ad.take(a, idx) * ad.take(a, idx)), [a])


def test_concat(rng):
    a = leaf(rng, 2, 3)
    b = leaf(rng, 2, 2)
    gradcheck(lambda: ad.sum_(ad.concat([a, b], axis=1) * ad.concat([a, b], axis=1)), [a, b])


def test_stack(rng):
    a = leaf(rng, 4)
    b = leaf(rng, 4)
    gradcheck(lambda: ad.sum_(ad.stack([a, b], axis=1) * ad.stack([a, b], axis=1)), [a, b])


def test_getitem_scalar_chain(rng):
    a = leaf(rng, 5)
    out = a[2] * 3.0
    out.backward()
    expected = np.zeros(5)
    expected[2] = 3.0
    np.testing.assert_allclose(a.grad, expected)


def test_backward_accumulates_through_diamond(rng):
    # y = x*x + x*x reuses the same parent twice
    x = Tensor(np.array([2.0]), requires_grad=True)
    m = x * x
    (m + m).sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_backward_seed(rng):
    x = leaf(rng, 3)
    y = x * 2.0
    y.backward(seed=np.array([1.0, 0.0, -1.0]))
    np.testing.assert_allclose(x.grad, [2.0, 0.0, -2.0])


def test_no_grad_blocks_graph(rng):
    x = leaf(rng, 3)
    with ad.no_grad():
        y = ad.sum_(x * x)
    y.backward()  # nothing to propagate: the graph was never recorded
    assert x.grad is None


def test_grad_requires_flag(rng):
    x = Tensor(rng.standard_normal(3))
    y = ad.sum_(x * x)
    y.backward()
    assert x.grad is None


def test_detach_cuts_gradient(rng):
    x = leaf(rng, 3)
    y = ad.sum_(x.detach() * x)
    y.backward()
    np.testing.assert_allclose(x.grad, x.data)


def test_zero_grad_resets_accumulator(rng):
    x = leaf(rng, 3)
    ad.sum_(x).backward()
    ad.sum_(x).backward()
    np.testing.assert_allclose(x.grad, [2.0, 2.0, 2.0])  # accumulates
    x.zero_grad()
    assert x.grad is None
    ad.sum_(x).backward()
    np.testing.assert_allclose(x.grad, [1.0, 1.0, 1.0])


def test_deep_chain_does_not_overflow(rng):
    # iterative topological order, so thousands of nodes are fine
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0001
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [1.0])


def test_float64_everywhere(rng):
    a = Tensor(np.array([1, 2, 3], dtype=np.int64))
    assert a.data.dtype == np.float64
    b = Tensor([0.5, 0.25])
    assert b.data.dtype == np.float64


def test_composed_attention_block(rng):
    """End-to-end check through softmax attention + tanh projection."""
    d, L = 4, 6
    h = leaf(rng, L, d)
    q = leaf(rng, d)
    w = leaf(rng, d, d)

    def f():
        qk = ad.tanh(q @ w)
        att = ad.softmax(h @ qk)
        pooled = ad.sum_(ad.reshape(att, (L, 1)) * h, axis=0)
        return ad.sum_(pooled * pooled)

    gradcheck(f, [h, q, w])
