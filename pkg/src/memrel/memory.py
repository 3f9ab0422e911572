"""Instance key-value memory: one slot per training example.

Slots hold (key, one-hot relation value, coefficient).  Keys are refreshed
once per epoch from the pair representations; values are frozen one-hot
labels; coefficients are reassigned after each epoch's training-set pass:
0 for mispredicted instances, 1/m_j for correctly predicted instances of
class j (so each class's correct slots sum to 1).
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .embedding import glorot


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()[:16]


class BiaffineParams:
    """Trainable (U, w1, w2, b) for the biaffine attention score."""

    def __init__(self, d: int, registry: ad.ParamRegistry, rng: np.random.Generator,
                 prefix: str = "biaffine"):
        self.d = d
        self.u = registry.register(f"{prefix}.u", ad.parameter(glorot(rng, (d, d), d, d)))
        self.w1 = registry.register(f"{prefix}.w1", ad.parameter(np.zeros(d)))
        self.w2 = registry.register(f"{prefix}.w2", ad.parameter(np.zeros(d)))
        self.b = registry.register(f"{prefix}.b", ad.parameter(np.zeros(())))


def score_dot(r_q: np.ndarray, r_j: np.ndarray) -> float:
    r_q, r_j = np.asarray(r_q), np.asarray(r_j)
    if r_q.shape != r_j.shape:
        raise ad.ShapeError(f"score_dot: {r_q.shape} vs {r_j.shape}")
    return float(np.dot(r_q, r_j))


def score_biaffine(r_q: np.ndarray, r_j: np.ndarray, params: BiaffineParams) -> float:
    r_q, r_j = np.asarray(r_q), np.asarray(r_j)
    if r_q.shape != (params.d,) or r_j.shape != (params.d,):
        raise ad.ShapeError(f"score_biaffine: expected ({params.d},), got {r_q.shape} and {r_j.shape}")
    return float(r_q @ params.u.data @ r_j
                 + params.w1.data @ r_q + params.w2.data @ r_j + params.b.data)


class MemoryStore:
    SNAPSHOT_VERSION = 1

    def __init__(self, keys: np.ndarray, values: np.ndarray, uids, instances=None,
                 frozen_keys: bool = False):
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if keys.shape[0] != values.shape[0] or keys.shape[0] == 0:
            raise ValueError(f"inconsistent or empty store: keys {keys.shape}, values {values.shape}")
        bad = (~np.isin(values, (0.0, 1.0))).any() or (values.sum(axis=1) != 1.0).any()
        if bad:
            raise ValueError("value rows must be one-hot")
        self.keys = keys
        self.values = values
        self.coef = np.zeros(keys.shape[0])
        self.uids = list(uids)
        if len(set(self.uids)) != len(self.uids) or len(self.uids) != keys.shape[0]:
            raise ValueError("slot_index must be a bijection over stored instance ids")
        self.slot_index = {uid: i for i, uid in enumerate(self.uids)}
        self.instances = list(instances) if instances is not None else None
        self.frozen_keys = frozen_keys
        self.coef_assigned = False
        self.epoch = -1
        self.write_log: dict[int, dict[int, str]] = {}

    # -- construction -------------------------------------------------------

    @classmethod
    def init_memory(cls, instances, d_r: int, n_r: int, rng: np.random.Generator):
        """Random keys, one-hot values; expects multi-label-expanded instances."""
        if not instances:
            raise ValueError("cannot build a memory over zero instances")
        m = len(instances)
        keys = rng.uniform(-0.1, 0.1, (m, d_r))
        values = np.zeros((m, n_r))
        for i, inst in enumerate(instances):
            if len(inst.relations) != 1:
                raise ValueError("memory instances must carry exactly one relation (expand first)")
            values[i, inst.relations[0]] = 1.0
        return cls(keys, values, uids=_slot_uids(instances), instances=instances)

    @classmethod
    def with_fixed_keys(cls, instances, keys: np.ndarray, n_r: int):
        values = np.zeros((len(instances), n_r))
        for i, inst in enumerate(instances):
            values[i, inst.relations[0]] = 1.0
        return cls(keys, values, uids=_slot_uids(instances), instances=instances,
                   frozen_keys=True)

    # -- per-epoch maintenance ----------------------------------------------

    @property
    def m(self) -> int:
        return self.keys.shape[0]

    @property
    def d_k(self) -> int:
        return self.keys.shape[1]

    @property
    def n_r(self) -> int:
        return self.values.shape[1]

    def gold_relations(self) -> np.ndarray:
        return self.values.argmax(axis=1)

    def begin_epoch(self, epoch: int):
        self.epoch = epoch
        self.write_log[epoch] = {}

    def update_key(self, slot: int, r: np.ndarray) -> str:
        """Overwrite one key with a detached copy of r; returns its digest."""
        if self.frozen_keys:
            raise ValueError("keys of a fixed-key store cannot be updated")
        if not 0 <= slot < self.m:
            raise IndexError(f"slot {slot} out of range [0, {self.m})")
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.d_k,):
            raise ad.ShapeError(f"update_key: expected ({self.d_k},), got {r.shape}")
        self.keys[slot] = r.copy()
        h = _digest(self.keys[slot])
        if self.epoch in self.write_log:
            self.write_log[self.epoch][slot] = h
        return h

    def assign_coefficients(self, predicted, mode: str = "dynamic"):
        """Coefficient pass: filter by correctness and balance by class size."""
        predicted = np.asarray(predicted, dtype=np.intp)
        if predicted.shape != (self.m,):
            raise ValueError(f"need one prediction per slot, got {predicted.shape}")
        gold = self.gold_relations()
        if mode == "dynamic":
            correct = predicted == gold
            self.coef = np.zeros(self.m)
            for j in range(self.n_r):
                mask = correct & (gold == j)
                mj = int(mask.sum())
                if mj > 0:
                    self.coef[mask] = 1.0 / mj
        elif mode == "balance":
            counts = np.bincount(gold, minlength=self.n_r)
            self.coef = 1.0 / counts[gold]
        else:
            raise ValueError(f"unknown coefficient mode: {mode!r}")
        self.coef_assigned = True

    # -- retrieval -----------------------------------------------------------

    def scores(self, r_q: np.ndarray, attention: str = "dot",
               biaffine: BiaffineParams | None = None) -> np.ndarray:
        r_q = np.asarray(r_q, dtype=np.float64)
        if r_q.shape != (self.d_k,):
            raise ad.ShapeError(f"query must have shape ({self.d_k},), got {r_q.shape}")
        if attention == "dot":
            return self.keys @ r_q
        if attention == "biaffine":
            return (self.keys @ (biaffine.u.data.T @ r_q)
                    + self.keys @ biaffine.w2.data
                    + float(biaffine.w1.data @ r_q) + float(biaffine.b.data))
        raise ValueError(f"unknown attention mode: {attention!r}")

    def respond(self, r_q: np.ndarray, mode: str = "value", attention: str = "dot",
                biaffine: BiaffineParams | None = None) -> np.ndarray:
        """Softmax over all slot scores, weighted by the coefficients."""
        w = self.scores(r_q, attention, biaffine)
        p = np.exp(w - w.max())
        p /= p.sum()
        weighted = p * self.coef
        if mode == "value":
            return weighted @ self.values
        if mode == "key":
            return weighted @ self.keys
        raise ValueError(f"unknown response mode: {mode!r}")

    def retrieval_weights(self, r_q: np.ndarray, attention: str = "dot",
                          biaffine: BiaffineParams | None = None) -> np.ndarray:
        """softmax(w_i) * c_i per slot, used for ranking and inspection."""
        w = self.scores(r_q, attention, biaffine)
        p = np.exp(w - w.max())
        p /= p.sum()
        return p * self.coef

    def response_node(self, r_q: ad.Node, mode: str, attention: str,
                      biaffine: BiaffineParams | None = None, train: bool = False,
                      rng=None, dropout_p: float = 0.0,
                      exclude_slots=None) -> ad.Node:
        """Differentiable batched response for queries r_q of shape (B, d_k).

        Gradients flow into r_q and the biaffine parameters; keys, values,
        and coefficients enter as constants.
        """
        keys = ad.constant(self.keys)
        if attention == "dot":
            scores = ad.matmul(r_q, ad.transpose(keys))
        elif attention == "biaffine":
            scores = ad.matmul(ad.matmul(r_q, biaffine.u), ad.transpose(keys))
            scores = ad.add(scores, ad.matmul(r_q, _col(biaffine.w1)))
            scores = ad.add(scores, ad.transpose(ad.matmul(keys, _col(biaffine.w2))))
            scores = ad.add(scores, biaffine.b)
        else:
            raise ValueError(f"unknown attention mode: {attention!r}")
        if exclude_slots is not None:
            mask = np.zeros(scores.data.shape)
            for b, slot in enumerate(exclude_slots):
                if slot is not None:
                    mask[b, slot] = -1e30
            scores = ad.add(scores, ad.constant(mask))
        p = ad.softmax(scores, axis=-1)
        weighted = ad.mul(p, ad.constant(self.coef))
        target = self.values if mode == "value" else self.keys
        if mode not in ("value", "key"):
            raise ValueError(f"unknown response mode: {mode!r}")
        response = ad.matmul(weighted, ad.constant(target))
        if train and dropout_p > 0.0:
            response = ad.dropout(response, dropout_p, rng, train=True)
        return response

    # -- serialization -------------------------------------------------------

    def save(self, path):
        np.savez(path,
                 version=np.array(self.SNAPSHOT_VERSION),
                 keys=self.keys, values=self.values, coef=self.coef,
                 uids=np.array(self.uids, dtype=np.int64),
                 frozen=np.array(int(self.frozen_keys)),
                 coef_assigned=np.array(int(self.coef_assigned)))

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            if int(z["version"]) != cls.SNAPSHOT_VERSION:
                raise ValueError(f"unsupported memory snapshot version: {int(z['version'])}")
            store = cls(z["keys"], z["values"], uids=z["uids"].tolist(),
                        frozen_keys=bool(int(z["frozen"])))
            store.coef = z["coef"]
            store.coef_assigned = bool(int(z["coef_assigned"]))
        return store


def _slot_uids(instances) -> list[int]:
    uids = [inst.uid for inst in instances]
    if len(set(uids)) != len(uids) or any(u < 0 for u in uids):
        uids = list(range(len(instances)))
    return uids


def _col(v: ad.Node) -> ad.Node:
    """View a vector parameter as a column matrix for matmul."""
    data = v.data.reshape(-1, 1)

    def backward(g):
        ad._accumulate(v, g.reshape(v.data.shape))

    return ad._result(data, (v,), "col", backward)


def build_fixed_keys(instances, embed_token) -> np.ndarray:
    """Static keys: mean token embedding per argument, concatenated.

    embed_token maps a token string to its static vector (word embedding,
    plus contextual when available).  Usable only with the value response.
    """
    rows = []
    for inst in instances:
        m1 = np.mean([embed_token(t) for t in inst.arg1], axis=0)
        m2 = np.mean([embed_token(t) for t in inst.arg2], axis=0)
        rows.append(np.concatenate([m1, m2]))
    return np.asarray(rows, dtype=np.float64)
