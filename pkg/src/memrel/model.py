"""The full pair classifier: embeddings -> encoder -> bi-attention -> heads,
with an optional memory response mixed into the relation logits."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import PairAttention
from .bpe import BpeModel, learn_bpe
from .classifier import ClassifierHeads, joint_loss
from .config import TrainConfig
from .corpus import Instance, LabelSpace, PAD_TOKEN, pad_truncate
from .embedding import (ContextualSource, EmbeddingConfig, EmbeddingModule,
                        SubwordEmbedder, Vocab, WordTable)
from .encoder import EncoderStack
from .memory import BiaffineParams, MemoryStore, build_fixed_keys


class RelationModel:
    def __init__(self, config: TrainConfig, label_space: LabelSpace,
                 vocab: Vocab, bpe: BpeModel, word_matrix: np.ndarray | None = None,
                 ctx_source_file: str | None = None):
        if config.n_r == 0:
            config.n_r = label_space.n_r
        if config.n_c == 0:
            config.n_c = label_space.n_c
        self.config = config
        self.label_space = label_space
        self.vocab = vocab
        self.bpe = bpe
        self.registry = ad.ParamRegistry()
        rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng(config.seed + 1)

        ecfg = EmbeddingConfig(d_w=config.d_w, d_s=config.d_s, d_c=config.d_c,
                               kernel_widths=config.kernel_widths,
                               highway_layers=config.highway_layers,
                               subword_symbol_dim=config.subword_symbol_dim)
        if word_matrix is not None:
            trainable = config.word_trainable if config.word_trainable is not None else False
            word_table = WordTable(vocab, word_matrix, trainable)
        else:
            trainable = config.word_trainable if config.word_trainable is not None else True
            word_table = WordTable.random(vocab, config.d_w, rng, trainable)
        subword = SubwordEmbedder(ecfg, bpe, self.registry, rng) if config.d_s > 0 else None
        contextual = None
        if config.d_c > 0:
            if ctx_source_file is None:
                raise ValueError("d_c > 0 requires a contextual vector file")
            contextual = ContextualSource.from_file(ctx_source_file, config.d_c,
                                                    self.registry, rng)
        self.embedding = EmbeddingModule(ecfg, word_table, subword, contextual, self.registry)
        # static snapshot for the fixed-key scheme (never updated)
        self.static_word_matrix = word_table.node.data.copy()

        self.encoder = EncoderStack(config.layers, config.d_e, self.registry, rng,
                                    kernel_width=config.encoder_kernel, prefix="encoder")
        self.encoder2 = self.encoder if config.share_encoder else EncoderStack(
            config.layers, config.d_e, self.registry, rng,
            kernel_width=config.encoder_kernel, prefix="encoder2")
        self.attention = PairAttention(config.d_e, self.registry, rng,
                                       use_relu=config.attention_relu)
        self.heads = ClassifierHeads(config.d_r, config.n_r, config.n_c,
                                     config.hidden, config.mlp_depth, config.lam,
                                     self.registry, rng, mlp_dropout=config.mlp_dropout)
        self.biaffine = None
        if config.attention == "biaffine" and config.response != "baseline":
            self.biaffine = BiaffineParams(self._key_dim(), self.registry, rng)
        self._fixed_rep_cache: dict[int, np.ndarray] = {}

    # -- helpers ---------------------------------------------------------

    def _key_dim(self) -> int:
        if self.config.key_mode == "fixed":
            return 2 * (self.config.d_w + self.config.d_c)
        return self.config.d_r

    def static_token_vector(self, token: str) -> np.ndarray:
        return self.static_word_matrix[self.vocab.id(token)]

    def fixed_representation(self, inst: Instance) -> np.ndarray:
        """Averaged static embeddings per argument, concatenated."""
        key = id(inst)
        rep = self._fixed_rep_cache.get(key)
        if rep is None:
            rep = np.concatenate([
                np.mean([self.static_token_vector(t) for t in inst.arg1], axis=0),
                np.mean([self.static_token_vector(t) for t in inst.arg2], axis=0)])
            self._fixed_rep_cache[key] = rep
        return rep

    def build_fixed_key_store(self, instances) -> MemoryStore:
        keys = build_fixed_keys(instances, self.static_token_vector)
        return MemoryStore.with_fixed_keys(instances, keys, self.config.n_r)

    def _pad_batch(self, instances, arg: int):
        n = self.config.pad_len
        seqs = [pad_truncate(inst.arg1 if arg == 1 else inst.arg2, n) for inst in instances]
        uids = [inst.uid for inst in instances]
        return self.embedding.make_batch(seqs, uids)

    # -- forward -----------------------------------------------------------

    def forward_batch(self, instances, memory: MemoryStore | None = None,
                      train: bool = False, with_loss: bool = False,
                      use_memory: bool = True, slots=None) -> dict:
        """Run the batch; returns nodes for r, logits, and optionally the loss.

        slots, when given, lists each instance's memory slot for
        self-retrieval exclusion.
        """
        cfg = self.config
        rng = self.dropout_rng
        b1 = self._pad_batch(instances, 1)
        b2 = self._pad_batch(instances, 2)
        e1 = self.embedding.sequence_node(b1)
        e2 = self.embedding.sequence_node(b2)
        layers1 = self.encoder.encode(e1)
        layers2 = self.encoder2.encode(e2)
        if cfg.mask_pad:
            m1 = b1.pad_mask[..., 0] < 0.5
            m2 = b2.pad_mask[..., 0] < 0.5
            r = self._masked_pair(layers1, layers2, m1, m2)
        else:
            r = self.attention.pair_node(layers1, layers2)

        mode = cfg.response if (use_memory and memory is not None
                                and cfg.response != "baseline") else "baseline"
        response = None
        if mode != "baseline":
            if cfg.key_mode == "fixed":
                r_q = ad.constant(np.stack([self.fixed_representation(i) for i in instances]))
            else:
                r_q = r
            exclude = slots if (cfg.exclude_self and slots is not None) else None
            response = memory.response_node(
                r_q, mode, cfg.attention, self.biaffine,
                train=train, rng=rng, dropout_p=cfg.memory_dropout,
                exclude_slots=exclude)

        rel_logits = self.heads.relation_logits(r, response, mode, train=train, rng=rng)
        out = {"r": r, "rel_logits": rel_logits,
               "rel_probs": _softmax_np(rel_logits.data)}
        if with_loss:
            gold_rel = np.array([inst.relations[0] for inst in instances], dtype=np.intp)
            conn_logits = None
            gold_conn = None
            if cfg.n_c > 0:
                conn_logits = self.heads.connective_logits(r, train=train, rng=rng)
                gold_conn = np.array([-1 if inst.connective is None else inst.connective
                                      for inst in instances], dtype=np.intp)
            out["loss"] = joint_loss(rel_logits, conn_logits, gold_rel, gold_conn)
        return out

    def _masked_pair(self, layers1, layers2, pad1, pad2) -> ad.Node:
        """Pair representation with PAD columns pushed to -inf before softmax."""
        parts = []
        neg1 = ad.constant(np.where(pad1, -1e30, 0.0)[:, None, :])
        neg2 = ad.constant(np.where(pad2, -1e30, 0.0)[:, None, :])
        att = self.attention
        for u1, u2 in zip(layers1, layers2):
            m = ad.matmul(att._ffn(u1), ad.transpose(u2))
            o2 = ad.matmul(ad.softmax(ad.add(m, neg2), axis=-1), u2)
            o1 = ad.matmul(ad.softmax(ad.add(ad.transpose(m), neg1), axis=-1), u1)
            parts.append(ad.concat([ad.seq_top2(o1), ad.seq_top2(o2)], axis=-1))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


def _softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def build_model(config: TrainConfig, label_space: LabelSpace, train_instances,
                word_matrix=None, vocab: Vocab | None = None,
                bpe: BpeModel | None = None) -> RelationModel:
    """Construct vocab and BPE from the training set, then the model."""
    if vocab is None:
        vocab = Vocab.from_instances(train_instances)
    if bpe is None:
        tokens = [t for inst in train_instances for t in (*inst.arg1, *inst.arg2)]
        bpe = learn_bpe(tokens, config.bpe_merges)
    if word_matrix is None and config.word_emb_path is not None:
        word_matrix, dim = load_word_matrix(config.word_emb_path, vocab,
                                            np.random.default_rng(config.seed))
        config.d_w = dim
    return RelationModel(config, label_space, vocab, bpe,
                         word_matrix=word_matrix, ctx_source_file=config.ctx_emb_path)


def load_word_matrix(path, vocab: Vocab, rng: np.random.Generator):
    """Align a "count dim" embedding file with the corpus vocab.

    Tokens missing from the file keep a random row; PAD stays zero.
    """
    with open(path, encoding="utf-8") as f:
        count, dim = (int(x) for x in f.readline().split())
        table = {}
        for _ in range(count):
            parts = f.readline().rstrip("\n").split(" ")
            table[parts[0]] = np.array([float(x) for x in parts[1:dim + 1]])
    matrix = rng.uniform(-0.1, 0.1, (len(vocab), dim))
    matrix[0] = 0.0
    for i, tok in enumerate(vocab.tokens):
        if tok in table:
            matrix[i] = table[tok]
    return matrix, dim
