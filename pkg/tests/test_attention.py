"""Bi-attention between argument encodings and 2-max pooling."""

import numpy as np

from memrel import autodiff as ad
from memrel.attention import PairAttention, top2_pool


def make_attention(d_e=2, use_relu=True, identity_ffn=False, seed=0):
    registry = ad.ParamRegistry()
    att = PairAttention(d_e, registry, np.random.default_rng(seed), use_relu=use_relu)
    if identity_ffn:
        att.w.data[...] = np.eye(d_e)
        att.b.data[...] = 0.0
    return att, registry


def test_top2_pool_oracle():
    o = np.array([[1.0, 4.0], [3.0, 2.0], [2.0, 5.0]])
    np.testing.assert_array_equal(top2_pool(o), [3.0, 5.0, 2.0, 4.0])


def test_top2_pool_constant_matrix():
    o = np.full((4, 3), 7.0)
    np.testing.assert_array_equal(top2_pool(o), np.full(6, 7.0))


def test_top2_pool_row_permutation_invariant():
    rng = np.random.default_rng(1)
    o = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(top2_pool(o), top2_pool(o[::-1].copy()))


def test_bi_attention_singletons():
    att, _ = make_attention(d_e=1, use_relu=False, identity_ffn=True)
    o1, o2 = att.bi_attention(ad.constant([[2.0]]), ad.constant([[3.0]]))
    np.testing.assert_allclose(o1.data, [[2.0]])
    np.testing.assert_allclose(o2.data, [[3.0]])


def test_bi_attention_identical_u2_rows():
    att, _ = make_attention(d_e=2)
    u1 = ad.constant(np.random.default_rng(2).normal(size=(3, 2)))
    row = np.array([1.5, -0.5])
    u2 = ad.constant(np.tile(row, (3, 1)))
    _, o2 = att.bi_attention(u1, u2)
    np.testing.assert_allclose(o2.data, np.tile(row, (3, 1)), atol=1e-12)


def test_attention_rows_are_convex_combinations():
    att, _ = make_attention(d_e=3)
    rng = np.random.default_rng(3)
    u1 = ad.constant(rng.normal(size=(4, 3)))
    u2 = ad.constant(rng.normal(size=(4, 3)))
    o1, o2 = att.bi_attention(u1, u2)
    # every o2 row lies inside the bounding box of u2's rows
    assert (o2.data <= u2.data.max(axis=0) + 1e-12).all()
    assert (o2.data >= u2.data.min(axis=0) - 1e-12).all()
    assert (o1.data <= u1.data.max(axis=0) + 1e-12).all()


def test_pair_node_size_is_4_de_L():
    att, _ = make_attention(d_e=3)
    rng = np.random.default_rng(4)
    layers1 = [ad.constant(rng.normal(size=(2, 5, 3))) for _ in range(2)]
    layers2 = [ad.constant(rng.normal(size=(2, 5, 3))) for _ in range(2)]
    r = att.pair_node(layers1, layers2)
    assert r.data.shape == (2, 4 * 3 * 2)


def test_swapping_arguments_permutes_halves():
    att, _ = make_attention(d_e=2, identity_ffn=True, use_relu=False)
    rng = np.random.default_rng(5)
    u1 = [ad.constant(rng.normal(size=(4, 2)))]
    u2 = [ad.constant(rng.normal(size=(4, 2)))]
    fwd = att.pair_node(u1, u2).data
    rev = att.pair_node(u2, u1).data
    half = fwd.shape[-1] // 2
    np.testing.assert_allclose(fwd[:half], rev[half:], atol=1e-12)
    np.testing.assert_allclose(fwd[half:], rev[:half], atol=1e-12)


def test_pair_representation_concatenates_layers():
    att, _ = make_attention(d_e=2)
    rng = np.random.default_rng(6)
    l1 = [rng.normal(size=(3, 2)) for _ in range(2)]
    l2 = [rng.normal(size=(3, 2)) for _ in range(2)]
    rep = att.pair_representation(l1, l2)
    assert rep.r.shape == (16,)
    assert [p.shape for p in rep.layer_parts] == [(8,), (8,)]
    np.testing.assert_array_equal(rep.r, np.concatenate(rep.layer_parts))


def test_attention_gradients():
    registry = ad.ParamRegistry()
    att = PairAttention(3, registry, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    u1 = rng.normal(size=(4, 3))
    u2 = rng.normal(size=(4, 3))
    fn = lambda: ad.sum_all(ad.sigmoid(
        att.pair_node([ad.constant(u1)], [ad.constant(u2)])))
    assert ad.check_gradients(fn, registry, 1e-5) < 1e-5
