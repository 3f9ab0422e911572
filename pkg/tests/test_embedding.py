"""Word table, subword conv/highway embedder, contextual source."""

import json

import numpy as np
import pytest

from memrel import autodiff as ad
from memrel.bpe import learn_bpe
from memrel.corpus import Instance, PAD_TOKEN, UNK_TOKEN, pad_truncate
from memrel.embedding import (ContextualSource, EmbeddingConfig,
                              EmbeddingModule, SubwordEmbedder, Vocab,
                              WordTable, _split_filters, glorot)


def make_embedder(d_w=4, d_s=6, d_c=0, ctx=None, tokens=("cat", "dog", "bird")):
    cfg = EmbeddingConfig(d_w=d_w, d_s=d_s, d_c=d_c, kernel_widths=(1, 2),
                          subword_symbol_dim=3)
    rng = np.random.default_rng(0)
    vocab = Vocab(tokens)
    registry = ad.ParamRegistry()
    word = WordTable.random(vocab, d_w, rng)
    sub = None
    if d_s > 0:
        sub = SubwordEmbedder(cfg, learn_bpe(list(tokens), 3), registry, rng)
    module = EmbeddingModule(cfg, word, sub, ctx, registry)
    return module, registry


def test_vocab_reserves_pad_and_unk():
    v = Vocab(["x", "y", "x"])
    assert v.tokens[:2] == [PAD_TOKEN, UNK_TOKEN]
    assert v.id("x") == 2
    assert v.id("never-seen") == 1
    assert v.id("also-never-seen") == 1


def test_word_table_pad_row_is_zero():
    rng = np.random.default_rng(0)
    table = WordTable.random(Vocab(["a"]), 5, rng)
    np.testing.assert_array_equal(table.node.data[0], 0.0)


def test_word_table_from_file(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("2 3\nfoo 1 2 3\nbar 4 5 6\n")
    table = WordTable.from_file(path)
    np.testing.assert_array_equal(table.embed_word("foo"), [1, 2, 3])
    np.testing.assert_array_equal(table.embed_word("bar"), [4, 5, 6])
    # UNK row is the mean of all file rows
    np.testing.assert_allclose(table.embed_word("baz"), [2.5, 3.5, 4.5])
    assert not table.trainable


def test_split_filters_distributes_remainder_first():
    assert _split_filters(10, (1, 2, 3)) == [4, 3, 3]
    assert _split_filters(9, (1, 2, 3)) == [3, 3, 3]
    assert _split_filters(5, (1, 2)) == [3, 2]


def test_subword_pad_embedding_is_zero():
    module, _ = make_embedder()
    np.testing.assert_array_equal(module.subword.embed_subword(PAD_TOKEN), 0.0)


def test_subword_is_deterministic_and_unseen_words_work():
    module, _ = make_embedder()
    a = module.subword.embed_subword("cat")
    b = module.subword.embed_subword("cat")
    np.testing.assert_array_equal(a, b)
    # unseen characters fall back to the UNK symbol without failing
    out = module.subword.embed_subword("zzz")
    assert out.shape == (6,)
    assert np.isfinite(out).all()


def test_sequence_embedding_shape_and_pad_rows():
    module, _ = make_embedder()
    seq = pad_truncate(("cat", "dog"), 5)
    out = module.embed_sequence(seq)
    assert out.shape == (5, 10)
    np.testing.assert_array_equal(out[2:], 0.0)
    assert np.abs(out[:2]).sum() > 0


def test_all_pad_sequence_embeds_to_zero():
    module, _ = make_embedder()
    out = module.embed_sequence((PAD_TOKEN,) * 4)
    np.testing.assert_array_equal(out, 0.0)


def test_unseen_tokens_share_the_unk_word_row():
    module, _ = make_embedder(d_s=0)
    a = module.embed_sequence(("qqq",))
    b = module.embed_sequence(("www",))
    np.testing.assert_array_equal(a, b)


def test_batched_matches_single_sequence():
    module, _ = make_embedder()
    s1 = pad_truncate(("cat", "dog"), 4)
    s2 = pad_truncate(("bird",), 4)
    batch = module.make_batch([s1, s2])
    out = module.sequence_node(batch).data
    np.testing.assert_allclose(out[0], module.embed_sequence(s1), atol=1e-12)
    np.testing.assert_allclose(out[1], module.embed_sequence(s2), atol=1e-12)


def test_word_gradients_flow_through_sequence():
    module, registry = make_embedder()
    batch = module.make_batch([pad_truncate(("cat",), 3)])
    out = ad.sum_all(module.sequence_node(batch))
    registry.zero_grad()
    ad.backward(out)
    word = registry["embed.word_table"]
    cat_row = module.word_table.vocab.id("cat")
    assert np.abs(word.grad[cat_row]).sum() > 0
    np.testing.assert_array_equal(word.grad[0], 0.0)  # PAD never updated via PAD rows


def test_contextual_identity_projection(tmp_path):
    path = tmp_path / "ctx.jsonl"
    recs = [{"uid": 7, "pos": 0, "vec": [1.0, 2.0]},
            {"uid": 7, "pos": 1, "vec": [3.0, 4.0]}]
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    registry = ad.ParamRegistry()
    src = ContextualSource.from_file(path, 2, registry, np.random.default_rng(0))
    src.projection.data[...] = np.eye(2)
    np.testing.assert_array_equal(src.embed_contextual(7, 0), [1.0, 2.0])
    np.testing.assert_array_equal(src.embed_contextual(7, 1), [3.0, 4.0])
    with pytest.raises(KeyError, match="instance 7 position 2"):
        src.raw(7, 2)


def test_glorot_respects_limit():
    rng = np.random.default_rng(0)
    w = glorot(rng, (100, 100), 100, 100)
    limit = np.sqrt(6.0 / 200)
    assert np.abs(w).max() <= limit
