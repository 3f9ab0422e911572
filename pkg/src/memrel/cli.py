"""Command-line surface: synth-data, train, eval, predict, inspect-memory, grid.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import TrainConfig
from .corpus import CorpusError, generate_synthetic, load_instances, save_instances
from .trainer import (TrainingError, evaluate, load_checkpoint, predict,
                      save_checkpoint, train)

PATH_KEYS = ("train_path", "dev_path", "test_path", "checkpoint", "report")
CONFIG_KEYS = set(TrainConfig.__dataclass_fields__) | set(PATH_KEYS)


class UsageError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in PATH_KEYS or key in ("optimizer", "attention", "response",
                                   "coefficient_mode", "key_mode",
                                   "word_emb_path", "ctx_emb_path"):
        return None if raw.lower() in ("none", "") else raw
    if key == "kernel_widths":
        return tuple(int(x) for x in raw.split(","))
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def read_run_config(path: str | None, overrides) -> dict:
    """key=value file plus command-line overrides; overrides win."""
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key=value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in CONFIG_KEYS:
                    raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _parse_value(key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override must be key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def split_run_config(values: dict):
    paths = {k: values.pop(k, None) for k in PATH_KEYS}
    try:
        config = TrainConfig.from_dict(values)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    return config, paths


def _require_file(path, what: str):
    if path is None:
        raise UsageError(f"missing required path: {what}")
    if not os.path.isfile(path):
        raise CorpusError(f"{what} file not found: {path}")


def _write_report(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def run_training(config: TrainConfig, paths: dict):
    _require_file(paths["train_path"], "train_path")
    _require_file(paths["dev_path"], "dev_path")
    train_insts, space = load_instances(paths["train_path"])
    dev_insts, _ = load_instances(paths["dev_path"], label_space=space)
    result = train(config, train_insts, dev_insts, space)
    records = list(result.reports)
    records.append({"summary": True, "best_epoch": result.best_epoch,
                    "best_dev_accuracy": result.reports[result.best_epoch]["dev_accuracy"]})
    if paths.get("report"):
        _write_report(paths["report"], records)
    if paths.get("checkpoint"):
        save_checkpoint(paths["checkpoint"], result.model, result.memory)
    return result, records


def cmd_train(args) -> int:
    values = read_run_config(args.config, args.set)
    config, paths = split_run_config(values)
    result, records = run_training(config, paths)
    summary = records[-1]
    print(f"best epoch {summary['best_epoch']} "
          f"dev accuracy {summary['best_dev_accuracy']:.4f}")
    return 0


def _load_eval_pair(args):
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.instances, "instance")
    model, memory = load_checkpoint(args.checkpoint)
    instances, _ = load_instances(args.instances, label_space=model.label_space)
    if not instances:
        raise CorpusError(f"no instances in {args.instances}")
    return model, memory, instances


def cmd_eval(args) -> int:
    model, memory, instances = _load_eval_pair(args)
    report = evaluate(model, memory, instances)
    print(f"accuracy {report.accuracy:.4f}")
    print(f"macro_f1 {report.macro_f1:.4f}")
    for j, name in enumerate(model.label_space.relations):
        print(f"f1[{name}] {report.f1[j]:.4f}")
    print("confusion:")
    for row in report.confusion:
        print(" ".join(str(x) for x in row))
    if args.out:
        _write_report(args.out, [report.to_dict()])
    return 0


def cmd_predict(args) -> int:
    model, memory, instances = _load_eval_pair(args)
    names = model.label_space.relations
    for inst in instances:
        probs, ranking, retrieved = predict(model, memory, inst, top_k=args.top_k)
        ranked = [(names[j], float(probs[j])) for j in ranking]
        print(json.dumps({"ranking": ranked, "retrieved": retrieved}, sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    model, memory, instances = _load_eval_pair(args)
    if memory is None:
        raise UsageError("checkpoint contains no memory snapshot")
    k = args.top_k
    if k > memory.m:
        print(f"warning: top_k {k} clamped to memory size {memory.m}", file=sys.stderr)
        k = memory.m
    names = model.label_space.relations
    for inst in instances:
        probs, ranking, retrieved = predict(model, memory, inst, top_k=k)
        rec = {
            "prediction": names[ranking[0]],
            "gold": [names[j] for j in inst.relations],
            "arg1": " ".join(inst.arg1),
            "arg2": " ".join(inst.arg2),
            "retrieved": [
                {"relation": names[r["relation"]], "weight": r["weight"],
                 **{k2: r[k2] for k2 in ("arg1", "arg2") if k2 in r}}
                for r in retrieved],
        }
        print(json.dumps(rec, sort_keys=True))
    return 0


GRID_CELLS = {
    "D+K": ("dot", "key"),
    "D+V": ("dot", "value"),
    "B+K": ("biaffine", "key"),
    "B+V": ("biaffine", "value"),
}


def cmd_grid(args) -> int:
    values = read_run_config(args.config, args.set)
    config, paths = split_run_config(values)
    _require_file(paths["train_path"], "train_path")
    _require_file(paths["dev_path"], "dev_path")
    eval_path = paths.get("test_path") or paths["dev_path"]
    _require_file(eval_path, "test_path")
    train_insts, space = load_instances(paths["train_path"])
    dev_insts, _ = load_instances(paths["dev_path"], label_space=space)
    eval_insts, _ = load_instances(eval_path, label_space=space)

    cells = args.cells.split(",") if args.cells else list(GRID_CELLS)
    for cell in cells:
        if cell not in GRID_CELLS:
            raise UsageError(f"unknown grid cell {cell!r}; choose from {sorted(GRID_CELLS)}")

    rows = []
    base_cfg = TrainConfig.from_dict({**config.to_dict(), "response": "baseline"})
    rows.append(_grid_row("baseline", base_cfg, train_insts, dev_insts, eval_insts, space))
    for cell in cells:
        attention, response = GRID_CELLS[cell]
        cfg = TrainConfig.from_dict({**config.to_dict(),
                                     "attention": attention, "response": response})
        rows.append(_grid_row(cell, cfg, train_insts, dev_insts, eval_insts, space))
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    if paths.get("report"):
        _write_report(paths["report"], rows)
    return 0


def _grid_row(name, cfg, train_insts, dev_insts, eval_insts, space) -> dict:
    result = train(cfg, train_insts, dev_insts, space)
    report = evaluate(result.model, result.memory, eval_insts)
    return {"model": name, "attention": cfg.attention, "response": cfg.response,
            "test_accuracy": report.accuracy, "test_macro_f1": report.macro_f1,
            "best_epoch": result.best_epoch}


def cmd_synth(args) -> int:
    train_insts, test_insts, space = generate_synthetic(
        args.num_train + args.num_dev, args.num_test, args.relations, args.seed)
    dev_insts = train_insts[args.num_train:]
    train_insts = train_insts[:args.num_train]
    os.makedirs(args.out_dir, exist_ok=True)
    for name, insts in (("train", train_insts), ("dev", dev_insts), ("test", test_insts)):
        save_instances(os.path.join(args.out_dir, f"{name}.jsonl"), insts, space)
    print(f"wrote {len(train_insts)}/{len(dev_insts)}/{len(test_insts)} instances "
          f"with {space.n_r} relations to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memrel",
                                description="memory-augmented text-pair relation classifier")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoint/report")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on an instance file")
    e.add_argument("checkpoint")
    e.add_argument("instances")
    e.add_argument("--out", help="write the report as JSON")
    e.set_defaults(fn=cmd_eval)

    pr = sub.add_parser("predict", help="ranked relations plus retrieved slots")
    pr.add_argument("checkpoint")
    pr.add_argument("instances")
    pr.add_argument("--top-k", type=int, default=0)
    pr.set_defaults(fn=cmd_predict)

    i = sub.add_parser("inspect-memory", help="per-instance retrieval listing")
    i.add_argument("checkpoint")
    i.add_argument("instances")
    i.add_argument("--top-k", type=int, default=1)
    i.set_defaults(fn=cmd_inspect)

    g = sub.add_parser("grid", help="attention x response comparison table")
    g.add_argument("--config", required=True)
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("--cells", help="comma-separated subset of D+K,D+V,B+K,B+V")
    g.set_defaults(fn=cmd_grid)

    s = sub.add_parser("synth-data", help="generate a planted-marker corpus")
    s.add_argument("out_dir")
    s.add_argument("--num-train", type=int, default=2000)
    s.add_argument("--num-dev", type=int, default=200)
    s.add_argument("--num-test", type=int, default=200)
    s.add_argument("--relations", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CorpusError, FileNotFoundError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (TrainingError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
