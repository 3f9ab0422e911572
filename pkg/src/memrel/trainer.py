"""Training loop, optimizer, evaluation, prediction, and checkpoints.

Each epoch runs four phases in order: seeded mini-batch optimization
(writing every instance's representation into its memory slot as it is
produced), an evaluation-mode pass over the training set that reassigns
the memory coefficients, a dev evaluation, and best-checkpoint tracking.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import backward
from .bpe import BpeModel
from .config import TrainConfig
from .corpus import Instance, LabelSpace, expand_multilabel
from .embedding import Vocab
from .memory import MemoryStore
from .metrics import EvalReport, compute_report
from .model import RelationModel, build_model


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam with bias correction; beta = (0.9, 0.999), eps = 1e-8."""

    def __init__(self, registry: ad.ParamRegistry, lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.registry = registry
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in registry.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in registry.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.registry.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / c1
            vhat = self.v[name] / c2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _rep_digest(r: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(r, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass
class TrainResult:
    model: RelationModel
    memory: MemoryStore
    reports: list[dict]
    best_epoch: int
    write_hashes: list[dict]  # per epoch: slot -> digest recorded at write time


def train(config: TrainConfig, train_instances, dev_instances,
          label_space: LabelSpace, word_matrix=None, log=None) -> TrainResult:
    expanded = [replace(inst, uid=i) for i, inst in
                enumerate(expand_multilabel(train_instances))]
    model = build_model(config, label_space, expanded, word_matrix=word_matrix)
    cfg = model.config

    mem_instances = expanded
    if cfg.memory_subsample and cfg.memory_subsample < len(expanded):
        pick = np.random.default_rng(cfg.seed + 3).choice(
            len(expanded), cfg.memory_subsample, replace=False)
        mem_instances = [expanded[i] for i in sorted(pick)]
    if cfg.key_mode == "fixed":
        memory = model.build_fixed_key_store(mem_instances)
    else:
        memory = MemoryStore.init_memory(mem_instances, cfg.d_r, cfg.n_r,
                                         np.random.default_rng(cfg.seed + 4))
    slot_of = {inst.uid: i for i, inst in enumerate(mem_instances)}

    optimizer = Adam(model.registry, cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed + 2)
    reports: list[dict] = []
    write_hashes: list[dict] = []
    best = None  # (accuracy, epoch, params snapshot, memory snapshot)
    since_best = 0

    for epoch in range(cfg.epochs):
        memory.begin_epoch(epoch)
        epoch_hashes: dict[int, str] = {}
        order = shuffle_rng.permutation(len(expanded))
        total_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [expanded[i] for i in idx]
            slots = [slot_of.get(inst.uid) for inst in batch]
            out = model.forward_batch(batch, memory, train=True, with_loss=True,
                                      slots=slots)
            loss = out["loss"]
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}")
            model.registry.zero_grad()
            backward(loss)
            optimizer.step()
            total_loss += float(loss.data)
            n_batches += 1
            if cfg.key_mode == "dynamic":
                reps = out["r"].data
                if cfg.clean_key_pass:
                    reps = model.forward_batch(batch, memory, train=False,
                                               use_memory=False)["r"].data
                for b, slot in enumerate(slots):
                    if slot is not None:
                        h = memory.update_key(slot, reps[b])
                        epoch_hashes[slot] = _rep_digest(reps[b])
        write_hashes.append(epoch_hashes)

        # coefficient pass: evaluation mode over every stored instance
        preds = _predict_ids(model, memory, mem_instances, cfg.batch_size,
                             use_memory=cfg.coef_pass_use_memory)
        memory.assign_coefficients(preds, mode=cfg.coefficient_mode)

        dev_report = evaluate(model, memory, dev_instances, batch_size=cfg.batch_size)
        record = {
            "epoch": epoch,
            "train_loss": total_loss / max(1, n_batches),
            "dev_accuracy": dev_report.accuracy,
            "dev_macro_f1": dev_report.macro_f1,
        }
        reports.append(record)
        if log is not None:
            log(record)

        if best is None or dev_report.accuracy > best[0]:
            best = (dev_report.accuracy, epoch, _snapshot_params(model),
                    _snapshot_memory(memory))
            since_best = 0
        else:
            since_best += 1
            if cfg.patience > 0 and since_best >= cfg.patience:
                break

    _restore_params(model, best[2])
    _restore_memory(memory, best[3])
    return TrainResult(model=model, memory=memory, reports=reports,
                       best_epoch=best[1], write_hashes=write_hashes)


def _snapshot_params(model: RelationModel) -> dict:
    snap = {name: p.data.copy() for name, p in model.registry.items()}
    snap["__word_matrix__"] = model.embedding.word_table.node.data.copy()
    return snap


def _restore_params(model: RelationModel, snap: dict):
    for name, p in model.registry.items():
        p.data[...] = snap[name]
    model.embedding.word_table.node.data[...] = snap["__word_matrix__"]


def _snapshot_memory(memory: MemoryStore) -> tuple:
    return memory.keys.copy(), memory.coef.copy(), memory.coef_assigned


def _restore_memory(memory: MemoryStore, snap: tuple):
    memory.keys[...] = snap[0]
    memory.coef[...] = snap[1]
    memory.coef_assigned = snap[2]


def _predict_ids(model, memory, instances, batch_size, use_memory=True) -> np.ndarray:
    preds = np.zeros(len(instances), dtype=np.intp)
    for start in range(0, len(instances), batch_size):
        batch = instances[start:start + batch_size]
        out = model.forward_batch(batch, memory, train=False, use_memory=use_memory)
        preds[start:start + len(batch)] = out["rel_probs"].argmax(axis=-1)
    return preds


def evaluate(model: RelationModel, memory: MemoryStore | None, instances,
             batch_size: int = 64) -> EvalReport:
    """Any-gold-match evaluation in evaluation mode (no dropout)."""
    preds = _predict_ids(model, memory, instances, batch_size)
    return compute_report(preds, [inst.relations for inst in instances],
                          model.config.n_r)


def predict(model: RelationModel, memory: MemoryStore | None, instance: Instance,
            top_k: int = 0):
    """Relation distribution plus the top-k retrieved slots by softmax * c."""
    out = model.forward_batch([instance], memory, train=False)
    probs = out["rel_probs"][0]
    ranking = list(np.argsort(-probs))
    retrieved = []
    if top_k > 0 and memory is not None and model.config.response != "baseline":
        if model.config.key_mode == "fixed":
            r_q = model.fixed_representation(instance)
        else:
            r_q = out["r"].data[0]
        weights = memory.retrieval_weights(r_q, model.config.attention, model.biaffine)
        top_k = min(top_k, memory.m)
        for slot in np.argsort(-weights)[:top_k]:
            entry = {"slot": int(slot), "weight": float(weights[slot]),
                     "relation": int(memory.gold_relations()[slot])}
            if memory.instances is not None:
                stored = memory.instances[slot]
                entry["arg1"] = " ".join(stored.arg1)
                entry["arg2"] = " ".join(stored.arg2)
            retrieved.append(entry)
    return probs, ranking, retrieved


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: RelationModel, memory: MemoryStore | None):
    cfg = model.config
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "label_space": {"relations": model.label_space.relations,
                        "connectives": model.label_space.connectives},
        "vocab": model.vocab.tokens,
        "bpe": {"merges": [list(m) for m in model.bpe.merges],
                "symbols": sorted(model.bpe.symbols)},
        "memory_instances": None,
    }
    arrays = {f"param:{name}": p.data for name, p in model.registry.items()}
    arrays["word_matrix"] = model.embedding.word_table.node.data
    arrays["static_word_matrix"] = model.static_word_matrix
    if memory is not None:
        arrays["mem:keys"] = memory.keys
        arrays["mem:values"] = memory.values
        arrays["mem:coef"] = memory.coef
        arrays["mem:uids"] = np.array(memory.uids, dtype=np.int64)
        arrays["mem:flags"] = np.array([int(memory.frozen_keys),
                                        int(memory.coef_assigned)])
        if memory.instances is not None:
            meta["memory_instances"] = [
                {"arg1": " ".join(i.arg1), "arg2": " ".join(i.arg2),
                 "connective": i.connective, "relations": list(i.relations)}
                for i in memory.instances]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    np.savez(path, __meta__=np.frombuffer(meta_bytes, dtype=np.uint8), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta['version']}")
        config = TrainConfig.from_dict(meta["config"])
        label_space = LabelSpace(meta["label_space"]["relations"],
                                 meta["label_space"]["connectives"])
        vocab = Vocab(meta["vocab"])
        vocab.tokens = meta["vocab"]
        vocab.index = {t: i for i, t in enumerate(vocab.tokens)}
        bpe = BpeModel(merges=[tuple(m) for m in meta["bpe"]["merges"]],
                       symbols=set(meta["bpe"]["symbols"]))
        model = RelationModel(config, label_space, vocab, bpe,
                              word_matrix=z["word_matrix"],
                              ctx_source_file=config.ctx_emb_path)
        for name, p in model.registry.items():
            p.data[...] = z[f"param:{name}"]
        model.static_word_matrix = z["static_word_matrix"].copy()
        memory = None
        if "mem:keys" in z:
            mem_instances = None
            if meta["memory_instances"] is not None:
                mem_instances = [
                    Instance(tuple(r["arg1"].split()), tuple(r["arg2"].split()),
                             r["connective"], tuple(r["relations"]), uid=i)
                    for i, r in enumerate(meta["memory_instances"])]
            memory = MemoryStore(z["mem:keys"], z["mem:values"],
                                 uids=z["mem:uids"].tolist(),
                                 instances=mem_instances,
                                 frozen_keys=bool(z["mem:flags"][0]))
            memory.coef = z["mem:coef"].copy()
            memory.coef_assigned = bool(z["mem:flags"][1])
    return model, memory
