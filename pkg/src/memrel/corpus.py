"""Instance data model, file ingestion, padding, and the synthetic corpus.

Instance files are UTF-8 JSON lines.  An optional first line

    {"label_space": {"relations": [...], "connectives": [...]}}

fixes the label order; every other line is a record

    {"arg1": "...", "arg2": "...", "connective": "..."|null, "relations": ["...", ...]}

A PDTB 2.0 licensee can produce three such files (train/dev/test) from the
standard section splits; see README for the converter notes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class CorpusError(ValueError):
    """Malformed instance file or label mismatch."""


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase whitespace tokenization."""
    return tuple(text.lower().split())


@dataclass(frozen=True)
class Instance:
    """One example: two token sequences, optional connective, gold relations."""

    arg1: tuple[str, ...]
    arg2: tuple[str, ...]
    connective: int | None
    relations: tuple[int, ...]
    uid: int = -1

    def __post_init__(self):
        if not self.relations:
            raise CorpusError("instance must carry at least one relation")
        if not self.arg1 or not self.arg2:
            raise CorpusError("instance arguments must be non-empty")


@dataclass
class LabelSpace:
    """Fixed-order relation and connective name lists; indices are one-hot ids."""

    relations: list[str]
    connectives: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.relations)) != len(self.relations):
            raise CorpusError("duplicate relation names")
        if len(set(self.connectives)) != len(self.connectives):
            raise CorpusError("duplicate connective names")

    @property
    def n_r(self) -> int:
        return len(self.relations)

    @property
    def n_c(self) -> int:
        return len(self.connectives)

    def relation_id(self, name: str) -> int:
        return self.relations.index(name)

    def connective_id(self, name: str) -> int:
        return self.connectives.index(name)


def load_instances(path, label_space: LabelSpace | None = None):
    """Load instances from a JSONL file.

    Returns (instances, label_space).  A caller-supplied label space wins
    over the file header; with neither, labels are interned in order of
    first appearance.
    """
    fixed = label_space is not None
    header: dict | None = None
    rel_names: list[str] = list(label_space.relations) if fixed else []
    conn_names: list[str] = list(label_space.connectives) if fixed else []
    instances: list[Instance] = []

    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed record: {e}") from None
            if "label_space" in rec:
                if lineno != 1:
                    raise CorpusError(f"{path}:{lineno}: label_space header must be the first line")
                header = rec["label_space"]
                if not fixed:
                    rel_names = list(header.get("relations", []))
                    conn_names = list(header.get("connectives", []))
                continue
            try:
                arg1 = tokenize(rec["arg1"])
                arg2 = tokenize(rec["arg2"])
                rels = rec["relations"]
                conn = rec.get("connective")
            except (KeyError, TypeError, AttributeError) as e:
                raise CorpusError(f"{path}:{lineno}: malformed record: {e}") from None
            if not rels:
                raise CorpusError(f"{path}:{lineno}: relations must be non-empty")

            rel_ids = []
            for name in rels:
                if name not in rel_names:
                    if fixed or (header is not None and "relations" in header):
                        raise CorpusError(f"{path}:{lineno}: unknown relation label {name!r}")
                    rel_names.append(name)
                rel_ids.append(rel_names.index(name))
            conn_id = None
            if conn is not None:
                if conn not in conn_names:
                    if fixed or (header is not None and "connectives" in header):
                        raise CorpusError(f"{path}:{lineno}: unknown connective label {conn!r}")
                    conn_names.append(conn)
                conn_id = conn_names.index(conn)
            try:
                instances.append(Instance(arg1, arg2, conn_id, tuple(rel_ids), uid=len(instances)))
            except CorpusError as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from None

    space = label_space if fixed else LabelSpace(rel_names, conn_names)
    return instances, space


def save_instances(path, instances, label_space: LabelSpace, write_header: bool = True):
    """Serialize instances as JSONL, inverse of load_instances."""
    with open(path, "w", encoding="utf-8") as f:
        if write_header:
            f.write(json.dumps({"label_space": {
                "relations": label_space.relations,
                "connectives": label_space.connectives,
            }}, sort_keys=True) + "\n")
        for inst in instances:
            rec = {
                "arg1": " ".join(inst.arg1),
                "arg2": " ".join(inst.arg2),
                "connective": None if inst.connective is None
                              else label_space.connectives[inst.connective],
                "relations": [label_space.relations[j] for j in inst.relations],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def expand_multilabel(instances) -> list[Instance]:
    """Training-time expansion: one instance per annotated relation."""
    out = []
    for inst in instances:
        for rel in inst.relations:
            out.append(replace(inst, relations=(rel,)))
    return out


def pad_truncate(tokens, n: int) -> tuple[str, ...]:
    """Keep the first n tokens; right-pad shorter sequences with PAD."""
    if n < 1:
        raise ValueError("pad length must be >= 1")
    tokens = tuple(tokens[:n])
    return tokens + (PAD_TOKEN,) * (n - len(tokens))


def generate_synthetic(num_train: int, num_test: int, n_r: int, seed: int,
                       vocab_size: int = 40, min_len: int = 4, max_len: int = 9):
    """Planted-marker corpus: relation j is signalled by token marker_j in arg2.

    Classes cycle round-robin, so any contiguous split stays balanced
    within +-1.  Deterministic given the seed.
    """
    if n_r < 2:
        raise ValueError("n_r must be >= 2")
    rng = np.random.default_rng(seed)
    fillers = [f"w{i}" for i in range(vocab_size)]
    space = LabelSpace(relations=[f"rel_{j}" for j in range(n_r)],
                       connectives=[f"conn_{j}" for j in range(n_r)])

    def make(idx: int) -> Instance:
        j = idx % n_r
        len1 = int(rng.integers(min_len, max_len + 1))
        len2 = int(rng.integers(min_len, max_len + 1))
        arg1 = tuple(fillers[i] for i in rng.integers(0, vocab_size, len1))
        arg2 = list(fillers[i] for i in rng.integers(0, vocab_size, len2))
        arg2[int(rng.integers(0, len2))] = f"marker_{j}"
        return Instance(arg1, tuple(arg2), connective=j, relations=(j,), uid=idx)

    train = [make(i) for i in range(num_train)]
    test = [make(num_train + i) for i in range(num_test)]
    return train, test, space
