"""Per-token embeddings: word table, BPE subword conv/highway, contextual file.

A token's embedding is the concatenation [word ; subword ; contextual].
Any source can be disabled by setting its dimension to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bpe import BpeModel
from .corpus import PAD_TOKEN, UNK_TOKEN


@dataclass
class EmbeddingConfig:
    d_w: int = 50
    d_s: int = 50
    d_c: int = 0
    kernel_widths: tuple[int, ...] = (1, 2, 3)
    highway_layers: int = 1
    subword_symbol_dim: int = 25

    @property
    def d_e(self) -> int:
        return self.d_w + self.d_s + self.d_c


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class Vocab:
    """Token to id map with reserved PAD = 0 and UNK = 1."""

    def __init__(self, tokens):
        self.tokens = [PAD_TOKEN, UNK_TOKEN]
        seen = set(self.tokens)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                self.tokens.append(t)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, 1)

    @classmethod
    def from_instances(cls, instances):
        toks = []
        for inst in instances:
            toks.extend(inst.arg1)
            toks.extend(inst.arg2)
        return cls(toks)


class WordTable:
    """Word embedding rows; PAD row is all-zero and frozen."""

    def __init__(self, vocab: Vocab, matrix: np.ndarray, trainable: bool):
        matrix = np.asarray(matrix, dtype=np.float64)
        matrix[0] = 0.0
        self.vocab = vocab
        self.trainable = trainable
        self.node = ad.parameter(matrix) if trainable else ad.constant(matrix)

    @property
    def d_w(self) -> int:
        return self.node.data.shape[1]

    @classmethod
    def random(cls, vocab: Vocab, d_w: int, rng: np.random.Generator, trainable: bool = True):
        return cls(vocab, rng.uniform(-0.1, 0.1, (len(vocab), d_w)), trainable)

    @classmethod
    def from_file(cls, path, trainable: bool = False):
        """Load "count dim" header format; UNK gets the mean of all rows."""
        with open(path, encoding="utf-8") as f:
            header = f.readline().split()
            count, dim = int(header[0]), int(header[1])
            tokens, rows = [], []
            for _ in range(count):
                parts = f.readline().rstrip("\n").split(" ")
                tokens.append(parts[0])
                rows.append([float(x) for x in parts[1:dim + 1]])
        vocab = Vocab(tokens)
        matrix = np.zeros((len(vocab), dim))
        matrix[1] = np.mean(rows, axis=0)
        for t, row in zip(tokens, rows):
            matrix[vocab.id(t)] = row
        return cls(vocab, matrix, trainable)

    def embed_word(self, token: str) -> np.ndarray:
        return self.node.data[self.vocab.id(token)].copy()


def _split_filters(d_s: int, widths) -> list[int]:
    """Distribute d_s output filters across kernel widths, remainder first."""
    base, rem = divmod(d_s, len(widths))
    return [base + (1 if i < rem else 0) for i in range(len(widths))]


class SubwordEmbedder:
    """BPE segmentation -> symbol embeddings -> conv + max pool -> highway."""

    def __init__(self, cfg: EmbeddingConfig, bpe: BpeModel, registry: ad.ParamRegistry,
                 rng: np.random.Generator, prefix: str = "subword"):
        self.cfg = cfg
        self.bpe = bpe
        symbols = sorted(bpe.symbols)
        self.sym_index = {s: i + 2 for i, s in enumerate(symbols)}  # 0 = pad, 1 = unk
        d_sym = cfg.subword_symbol_dim
        n_sym = len(symbols) + 2
        table = rng.uniform(-0.1, 0.1, (n_sym, d_sym))
        table[0] = 0.0
        self.table = registry.register(f"{prefix}.table", ad.parameter(table))
        self.filters = _split_filters(cfg.d_s, cfg.kernel_widths)
        self.convs = []
        for w, f in zip(cfg.kernel_widths, self.filters):
            kw = registry.register(f"{prefix}.conv{w}.w",
                                   ad.parameter(glorot(rng, (w, d_sym, f), w * d_sym, f)))
            kb = registry.register(f"{prefix}.conv{w}.b", ad.parameter(np.zeros(f)))
            self.convs.append((kw, kb))
        self.highway = []
        for l in range(cfg.highway_layers):
            wt = registry.register(f"{prefix}.hw{l}.wt",
                                   ad.parameter(glorot(rng, (cfg.d_s, cfg.d_s), cfg.d_s, cfg.d_s)))
            # bias < 0 starts the gate mostly closed (carry-dominant)
            bt = registry.register(f"{prefix}.hw{l}.bt", ad.parameter(np.full(cfg.d_s, -1.0)))
            wh = registry.register(f"{prefix}.hw{l}.wh",
                                   ad.parameter(glorot(rng, (cfg.d_s, cfg.d_s), cfg.d_s, cfg.d_s)))
            bh = registry.register(f"{prefix}.hw{l}.bh", ad.parameter(np.zeros(cfg.d_s)))
            self.highway.append((wt, bt, wh, bh))
        self._seg_cache: dict[str, list[int]] = {}

    def _symbol_ids(self, word: str) -> list[int]:
        ids = self._seg_cache.get(word)
        if ids is None:
            ids = [self.sym_index.get(s, 1) for s in self.bpe.segment(word)]
            self._seg_cache[word] = ids
        return ids

    def words_node(self, words: list[str]) -> ad.Node:
        """Embed a list of word strings as one (len(words), d_s) node."""
        seqs = [self._symbol_ids(w) for w in words]
        s_max = max(len(s) for s in seqs)
        idx = np.zeros((len(words), s_max), dtype=np.intp)
        for i, s in enumerate(seqs):
            idx[i, :len(s)] = s
        x = ad.gather(self.table, idx)  # (W, S, d_sym)
        pooled = []
        for kw, kb in self.convs:
            pooled.append(ad.seq_max(ad.conv1d(x, kw, kb)))
        h = ad.concat(pooled, axis=-1)  # (W, d_s)
        for wt, bt, wh, bh in self.highway:
            t = ad.sigmoid(ad.add(ad.matmul(h, wt), bt))
            cand = ad.relu(ad.add(ad.matmul(h, wh), bh))
            h = ad.add(ad.mul(t, cand), ad.mul(ad.add(ad.constant(1.0), ad.scale(t, -1.0)), h))
        return h

    def embed_subword(self, word: str) -> np.ndarray:
        if word == PAD_TOKEN:
            return np.zeros(self.cfg.d_s)
        return self.words_node([word]).data[0].copy()


class ContextualSource:
    """Precomputed per-(instance, position) vectors behind a trainable projection."""

    def __init__(self, vectors: dict[tuple[int, int], np.ndarray], file_dim: int,
                 d_c: int, registry: ad.ParamRegistry, rng: np.random.Generator,
                 prefix: str = "contextual"):
        self.vectors = vectors
        self.file_dim = file_dim
        self.d_c = d_c
        self.projection = registry.register(
            f"{prefix}.proj", ad.parameter(glorot(rng, (file_dim, d_c), file_dim, d_c)))

    @classmethod
    def from_file(cls, path, d_c: int, registry, rng):
        """JSONL records: {"uid": int, "pos": int, "vec": [floats]}."""
        vectors = {}
        file_dim = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                vec = np.asarray(rec["vec"], dtype=np.float64)
                if file_dim is None:
                    file_dim = vec.size
                vectors[(int(rec["uid"]), int(rec["pos"]))] = vec
        if file_dim is None:
            raise ValueError(f"empty contextual vector file: {path}")
        return cls(vectors, file_dim, d_c, registry, rng)

    def raw(self, uid: int, pos: int) -> np.ndarray:
        key = (uid, pos)
        if key not in self.vectors:
            raise KeyError(f"no contextual vector for instance {uid} position {pos}")
        return self.vectors[key]

    def embed_contextual(self, uid: int, pos: int) -> np.ndarray:
        return self.raw(uid, pos) @ self.projection.data


@dataclass
class SequenceBatch:
    """Padded token strings plus derived index arrays for one argument."""

    tokens: list[tuple[str, ...]]
    word_ids: np.ndarray        # (B, N) into the word vocab
    pad_mask: np.ndarray        # (B, N, 1), 1.0 where token != PAD
    uids: list[int] = field(default_factory=list)


class EmbeddingModule:
    """Produces the (B, N, d_e) embedded sequence for a padded token batch."""

    def __init__(self, cfg: EmbeddingConfig, word_table: WordTable,
                 subword: SubwordEmbedder | None, contextual: ContextualSource | None,
                 registry: ad.ParamRegistry, prefix: str = "embed"):
        self.cfg = cfg
        self.word_table = word_table
        self.subword = subword
        self.contextual = contextual
        if cfg.d_s > 0 and subword is None:
            raise ValueError("d_s > 0 requires a subword embedder")
        if cfg.d_c > 0 and contextual is None:
            raise ValueError("d_c > 0 requires a contextual source")
        if word_table.trainable and word_table.node.requires_grad:
            registry.register(f"{prefix}.word_table", word_table.node)

    def make_batch(self, padded_token_seqs, uids=None) -> SequenceBatch:
        b = len(padded_token_seqs)
        n = len(padded_token_seqs[0])
        word_ids = np.zeros((b, n), dtype=np.intp)
        mask = np.zeros((b, n, 1))
        for i, seq in enumerate(padded_token_seqs):
            for k, tok in enumerate(seq):
                word_ids[i, k] = self.word_table.vocab.id(tok)
                mask[i, k, 0] = 0.0 if tok == PAD_TOKEN else 1.0
        return SequenceBatch(list(padded_token_seqs), word_ids, mask,
                             list(uids) if uids is not None else [])

    def sequence_node(self, batch: SequenceBatch) -> ad.Node:
        parts = []
        if self.cfg.d_w > 0:
            parts.append(ad.gather(self.word_table.node, batch.word_ids))
        if self.cfg.d_s > 0:
            words = sorted({t for seq in batch.tokens for t in seq if t != PAD_TOKEN})
            words = [PAD_TOKEN] + words
            pos = {w: i for i, w in enumerate(words)}
            sub_matrix = self.subword.words_node(words)
            idx = np.array([[pos[t] for t in seq] for seq in batch.tokens], dtype=np.intp)
            parts.append(ad.gather(sub_matrix, idx))
        if self.cfg.d_c > 0:
            b, n = batch.word_ids.shape
            raw = np.zeros((b, n, self.contextual.file_dim))
            for i, seq in enumerate(batch.tokens):
                uid = batch.uids[i]
                for k, tok in enumerate(seq):
                    if tok != PAD_TOKEN:
                        raw[i, k] = self.contextual.raw(uid, k)
            parts.append(ad.matmul(ad.constant(raw), self.contextual.projection))
        out = parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)
        return ad.mul(out, ad.constant(batch.pad_mask))

    def embed_sequence(self, padded_tokens, uid: int | None = None) -> np.ndarray:
        """Eval-mode embedding of one padded token sequence, shape (N, d_e)."""
        batch = self.make_batch([tuple(padded_tokens)], [uid if uid is not None else -1])
        return self.sequence_node(batch).data[0].copy()
