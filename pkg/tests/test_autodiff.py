"""Unit tests for the reverse-mode autodiff engine.

Every primitive's backward pass is checked against central differences;
analytic oracle values were derived independently and frozen here.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memrel import autodiff as ad


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def analytic_grad(op, x, *extra):
    p = ad.parameter(x.copy())
    out = ad.sum_all(op(p, *extra))
    ad.backward(out)
    return p.grad


def check_op(op, x, *extra, tol=1e-6):
    a = analytic_grad(op, x, *extra)
    n = numeric_grad(lambda v: float(op(ad.constant(v), *extra).data.sum()), x)
    assert np.max(np.abs(a - n)) < tol, f"analytic\n{a}\nvs numeric\n{n}"


# ---------------------------------------------------------------------------
# primitive gradients against central differences


RNG = np.random.default_rng(0)


def test_add_grad():
    b = ad.constant(RNG.normal(size=(3, 4)))
    check_op(lambda x: ad.add(x, b), RNG.normal(size=(3, 4)))


def test_add_broadcast_grad():
    b = ad.constant(RNG.normal(size=(3, 4)))
    check_op(lambda x: ad.add(x, b), RNG.normal(size=(4,)))


def test_mul_grad():
    b = ad.constant(RNG.normal(size=(3, 4)))
    check_op(lambda x: ad.mul(x, b), RNG.normal(size=(3, 4)))


def test_scale_grad():
    check_op(lambda x: ad.scale(x, -2.5), RNG.normal(size=(5,)))


def test_matmul_grad_left():
    b = ad.constant(RNG.normal(size=(4, 2)))
    check_op(lambda x: ad.matmul(x, b), RNG.normal(size=(3, 4)))


def test_matmul_grad_right():
    a = ad.constant(RNG.normal(size=(3, 4)))
    check_op(lambda x: ad.matmul(a, x), RNG.normal(size=(4, 2)))


def test_matmul_batched_grad():
    b = ad.constant(RNG.normal(size=(5, 4, 2)))
    check_op(lambda x: ad.matmul(x, b), RNG.normal(size=(5, 3, 4)))


def test_transpose_grad():
    check_op(ad.transpose, RNG.normal(size=(2, 3, 4)))


def test_sigmoid_grad():
    check_op(ad.sigmoid, RNG.normal(size=(3, 3)))


def test_relu_grad():
    # keep values away from the kink at 0
    x = RNG.normal(size=(4, 4))
    x[np.abs(x) < 0.1] = 0.5
    check_op(ad.relu, x)


def test_softmax_grad():
    w = ad.constant(RNG.normal(size=(3, 5)))
    check_op(lambda x: ad.mul(ad.softmax(x, axis=-1), w), RNG.normal(size=(3, 5)))


def test_conv1d_grad_input():
    w = ad.constant(RNG.normal(size=(3, 4, 5)))
    check_op(lambda x: ad.conv1d(x, w), RNG.normal(size=(2, 6, 4)))


def test_conv1d_grad_weights():
    x = ad.constant(RNG.normal(size=(2, 6, 4)))
    check_op(lambda w: ad.conv1d(x, w), RNG.normal(size=(3, 4, 5)))


def test_conv1d_grad_bias():
    x = ad.constant(RNG.normal(size=(2, 6, 4)))
    w = ad.constant(RNG.normal(size=(3, 4, 5)))
    check_op(lambda b: ad.conv1d(x, w, b), RNG.normal(size=(5,)))


def test_seq_max_grad():
    # distinct values, no argmax ties
    x = RNG.permutation(24).reshape(2, 4, 3).astype(np.float64)
    check_op(ad.seq_max, x)


def test_seq_top2_grad():
    x = RNG.permutation(24).reshape(2, 4, 3).astype(np.float64)
    check_op(ad.seq_top2, x)


def test_concat_grad():
    b = ad.constant(RNG.normal(size=(3, 2)))
    check_op(lambda x: ad.concat([x, b], axis=-1), RNG.normal(size=(3, 4)))


def test_gather_grad():
    idx = np.array([[0, 2, 2], [1, 0, 3]])
    check_op(lambda t: ad.gather(t, idx), RNG.normal(size=(4, 5)))


def test_cross_entropy_grad():
    onehot = np.zeros((3, 4))
    onehot[np.arange(3), [1, 0, 3]] = 1.0
    check_op(lambda z: ad.cross_entropy(z, ad.constant(onehot)),
             RNG.normal(size=(3, 4)))


def test_mean_all_grad():
    check_op(lambda x: ad.mean_all(x), RNG.normal(size=(3, 4)))


# ---------------------------------------------------------------------------
# forward-value oracles


def test_conv1d_matches_naive_loop():
    """Same-padded convolution against an index-by-index reference."""
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(3, 4, 5))
    out = ad.conv1d(ad.constant(x), ad.constant(w)).data
    k, n = 3, 6
    left = (k - 1) // 2
    expected = np.zeros((n, 5))
    xp = np.pad(x, [(left, k // 2), (0, 0)])
    for t in range(n):
        for tap in range(k):
            expected[t] += xp[t + tap] @ w[tap]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv1d_width_one_is_projection():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(1, 3, 2))
    out = ad.conv1d(ad.constant(x), ad.constant(w)).data
    np.testing.assert_allclose(out, x @ w[0], atol=1e-12)


def test_seq_top2_layout_and_ties():
    x = np.array([[1.0, 4.0], [3.0, 2.0], [2.0, 5.0]])
    out = ad.seq_top2(ad.constant(x)).data
    np.testing.assert_array_equal(out, [3.0, 5.0, 2.0, 4.0])


def test_seq_top2_single_row():
    out = ad.seq_top2(ad.constant([[2.0, -1.0]])).data
    np.testing.assert_array_equal(out, [2.0, -1.0, 2.0, -1.0])


def test_seq_top2_tie_gradient_goes_to_lower_index():
    p = ad.parameter(np.array([[1.0], [1.0], [0.0]]))
    out = ad.sum_all(ad.seq_top2(p))
    ad.backward(out)
    np.testing.assert_array_equal(p.grad, [[1.0], [1.0], [0.0]])


def test_seq_max_tie_gradient_goes_to_lower_index():
    p = ad.parameter(np.array([[2.0], [2.0]]))
    ad.backward(ad.sum_all(ad.seq_max(p)))
    np.testing.assert_array_equal(p.grad, [[1.0], [0.0]])


def test_cross_entropy_values():
    logits = np.log(np.array([[0.5, 0.25, 0.25]]))
    onehot = np.array([[1.0, 0.0, 0.0]])
    out = ad.cross_entropy(ad.constant(logits), ad.constant(onehot)).data
    np.testing.assert_allclose(out, [np.log(2.0)], atol=1e-12)


def test_cross_entropy_grad_is_probs_minus_onehot():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(2, 4))
    onehot = np.zeros((2, 4))
    onehot[[0, 1], [2, 0]] = 1.0
    p = ad.parameter(z.copy())
    ad.backward(ad.sum_all(ad.cross_entropy(p, ad.constant(onehot))))
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(p.grad, probs - onehot, atol=1e-12)


def test_dropout_eval_is_identity():
    x = ad.constant(RNG.normal(size=(3, 3)))
    assert ad.dropout(x, 0.5, RNG, train=False) is x


def test_dropout_train_scales_survivors():
    rng = np.random.default_rng(4)
    x = np.ones((200, 200))
    out = ad.dropout(ad.constant(x), 0.25, rng, train=True).data
    survivors = out[out != 0.0]
    np.testing.assert_allclose(survivors, 1.0 / 0.75)
    assert abs(out.mean() - 1.0) < 0.02


# ---------------------------------------------------------------------------
# graph mechanics


def test_gradient_accumulates_on_shared_node():
    p = ad.parameter(np.array(2.0).reshape(()))
    # f = p*p + p -> df/dp = 2p + 1 = 5
    out = ad.add(ad.mul(p, p), p)
    ad.backward(ad.sum_all(out))
    np.testing.assert_allclose(p.grad, 5.0)


def test_backward_requires_scalar_root():
    p = ad.parameter(np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.add(p, p))


def test_constant_receives_no_grad():
    c = ad.constant(np.ones(3))
    p = ad.parameter(np.ones(3))
    ad.backward(ad.sum_all(ad.mul(c, p)))
    assert c.grad is None
    assert p.grad is not None


def test_deep_chain_does_not_recurse():
    node = ad.parameter(np.array(1.0).reshape(()))
    out = node
    for _ in range(5000):
        out = ad.add(out, ad.constant(0.0))
    ad.backward(out)
    np.testing.assert_allclose(node.grad, 1.0)


def test_registry_rejects_duplicates_and_constants():
    reg = ad.ParamRegistry()
    reg.register("a", ad.parameter(np.ones(2)))
    with pytest.raises(ValueError):
        reg.register("a", ad.parameter(np.ones(2)))
    with pytest.raises(ValueError):
        reg.register("b", ad.constant(np.ones(2)))


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 4))))
    with pytest.raises(ad.ShapeError):
        ad.conv1d(ad.constant(np.ones((4, 3))), ad.constant(np.ones((3, 5, 2))))


def test_check_gradients_epsilon_range():
    reg = ad.ParamRegistry()
    p = reg.register("p", ad.parameter(np.ones(2)))
    fn = lambda: ad.sum_all(ad.mul(p, p))
    with pytest.raises(ValueError):
        ad.check_gradients(fn, reg, epsilon=1e-2)
    with pytest.raises(ValueError):
        ad.check_gradients(fn, reg, epsilon=0.0)
    assert ad.check_gradients(fn, reg, epsilon=1e-5) < 1e-8


def test_check_gradients_catches_wrong_backward():
    """A deliberately broken op must be flagged, not silently accepted."""
    reg = ad.ParamRegistry()
    p = reg.register("p", ad.parameter(np.full(3, 0.7)))

    def bad_square(x):
        def backward(g):
            ad._accumulate(x, g * 3.0 * x.data)  # wrong: should be 2x
        return ad._result(x.data ** 2, (x,), "bad_square", backward)

    err = ad.check_gradients(lambda: ad.sum_all(bad_square(p)), reg, 1e-5)
    assert err > 0.1


# ---------------------------------------------------------------------------
# property tests


array_2d = st.tuples(st.integers(1, 4), st.integers(1, 4))


@settings(max_examples=25, deadline=None)
@given(shape=array_2d, seed=st.integers(0, 10_000))
def test_softmax_rows_are_distributions(shape, seed):
    x = np.random.default_rng(seed).normal(scale=3.0, size=shape)
    out = ad.softmax(ad.constant(x), axis=-1).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_unbroadcast_inverts_broadcasting(seed):
    rng = np.random.default_rng(seed)
    small = rng.normal(size=(1, 4))
    big = rng.normal(size=(3, 5, 4))
    g = np.ones_like(big + small)
    reduced = ad._unbroadcast(g, small.shape)
    assert reduced.shape == small.shape
    np.testing.assert_allclose(reduced, 15.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 6), c=st.integers(1, 4))
def test_seq_top2_matches_sort(seed, n, c):
    x = np.random.default_rng(seed).normal(size=(n, c))
    out = ad.seq_top2(ad.constant(x)).data
    srt = np.sort(x, axis=0)
    np.testing.assert_allclose(out[:c], srt[-1])
    np.testing.assert_allclose(out[c:], srt[-2])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_cross_entropy_nonnegative(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=4.0, size=(3, 5))
    onehot = np.zeros((3, 5))
    onehot[np.arange(3), rng.integers(0, 5, 3)] = 1.0
    out = ad.cross_entropy(ad.constant(z), ad.constant(onehot)).data
    assert (out >= -1e-12).all()
