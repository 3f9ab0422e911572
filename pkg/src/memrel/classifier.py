"""Relation/connective classifier heads, memory mixing, and the joint loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .embedding import glorot


class MLP:
    """depth hidden ReLU layers with train-time dropout, then a linear output."""

    def __init__(self, prefix: str, in_dim: int, hidden: int, depth: int, out_dim: int,
                 registry: ad.ParamRegistry, rng: np.random.Generator, dropout: float = 0.5):
        self.dropout = dropout
        self.layers = []
        cur = in_dim
        for l in range(depth):
            w = registry.register(f"{prefix}.h{l}.w",
                                  ad.parameter(glorot(rng, (cur, hidden), cur, hidden)))
            b = registry.register(f"{prefix}.h{l}.b", ad.parameter(np.zeros(hidden)))
            self.layers.append((w, b))
            cur = hidden
        self.out_w = registry.register(f"{prefix}.out.w",
                                       ad.parameter(glorot(rng, (cur, out_dim), cur, out_dim)))
        self.out_b = registry.register(f"{prefix}.out.b", ad.parameter(np.zeros(out_dim)))
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: ad.Node, train: bool = False,
                 rng: np.random.Generator | None = None) -> ad.Node:
        if x.data.shape[-1] != self.in_dim:
            raise ad.ShapeError(f"MLP: expected input width {self.in_dim}, got {x.data.shape}")
        h = x
        for w, b in self.layers:
            h = ad.relu(ad.add(ad.matmul(h, w), b))
            if train and self.dropout > 0.0:
                h = ad.dropout(h, self.dropout, rng, train=True)
        return ad.add(ad.matmul(h, self.out_w), self.out_b)


class ClassifierHeads:
    """MLP_r, MLP_c, MLP_m and the lambda-mixed relation output."""

    def __init__(self, d_r: int, n_r: int, n_c: int, hidden: int, depth: int, lam: float,
                 registry: ad.ParamRegistry, rng: np.random.Generator,
                 mlp_dropout: float = 0.5):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {lam}")
        self.lam = lam
        self.n_r = n_r
        self.n_c = n_c
        self.d_r = d_r
        self.mlp_r = MLP("mlp_r", d_r, hidden, depth, n_r, registry, rng, mlp_dropout)
        self.mlp_c = MLP("mlp_c", d_r, hidden, depth, n_c, registry, rng, mlp_dropout) if n_c > 0 else None
        self.mlp_m = MLP("mlp_m", n_r, 4 * n_r, 1, n_r, registry, rng, mlp_dropout)

    def relation_logits(self, r: ad.Node, response: ad.Node | None, mode: str,
                        train: bool = False, rng=None) -> ad.Node:
        base = self.mlp_r(r, train, rng)
        if mode == "baseline":
            return base
        if response is None:
            raise ValueError(f"mode {mode!r} requires a memory response")
        if mode == "value":
            if response.data.shape[-1] != self.n_r:
                raise ad.ShapeError(
                    f"value response must have width {self.n_r}, got {response.data.shape}")
            mem = self.mlp_m(response, train, rng)
        elif mode == "key":
            if response.data.shape[-1] != self.d_r:
                raise ad.ShapeError(
                    f"key response must have width {self.d_r}, got {response.data.shape}")
            mem = self.mlp_r(response, train, rng)
        else:
            raise ValueError(f"unknown response mode: {mode!r}")
        return ad.add(ad.scale(base, 1.0 - self.lam), ad.scale(mem, self.lam))

    def relation_output(self, r: ad.Node, response: ad.Node | None, mode: str,
                        train: bool = False, rng=None) -> ad.Node:
        return ad.softmax(self.relation_logits(r, response, mode, train, rng), axis=-1)

    def connective_logits(self, r: ad.Node, train: bool = False, rng=None) -> ad.Node:
        if self.mlp_c is None:
            raise ValueError("no connective head configured (n_c = 0)")
        return self.mlp_c(r, train, rng)

    def connective_output(self, r: ad.Node, train: bool = False, rng=None) -> ad.Node:
        return ad.softmax(self.connective_logits(r, train, rng), axis=-1)


def one_hot(ids, n: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.intp)
    out = np.zeros(ids.shape + (n,))
    np.put_along_axis(out, np.clip(ids, 0, n - 1)[..., None], 1.0, axis=-1)
    out[ids < 0] = 0.0
    return out


def joint_loss(rel_logits: ad.Node, conn_logits: ad.Node | None,
               gold_rel, gold_conn=None) -> ad.Node:
    """Mean over the batch of relation CE plus connective CE.

    gold_conn entries of -1 (or conn_logits=None) drop the connective term
    for that instance.
    """
    n_r = rel_logits.data.shape[-1]
    loss = ad.cross_entropy(rel_logits, ad.constant(one_hot(gold_rel, n_r)))
    if conn_logits is not None and gold_conn is not None:
        gold_conn = np.asarray(gold_conn, dtype=np.intp)
        n_c = conn_logits.data.shape[-1]
        mask = (gold_conn >= 0).astype(np.float64)
        ce_c = ad.cross_entropy(conn_logits, ad.constant(one_hot(gold_conn, n_c)))
        loss = ad.add(loss, ad.mul(ce_c, ad.constant(mask)))
    return ad.mean_all(loss)
