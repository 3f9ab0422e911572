"""Memory-augmented text-pair relation classifier with hand-built autodiff."""

from .config import TrainConfig
from .corpus import Instance, LabelSpace, expand_multilabel, generate_synthetic, \
    load_instances, pad_truncate, save_instances
from .memory import BiaffineParams, MemoryStore, build_fixed_keys, score_biaffine, score_dot
from .metrics import EvalReport, compute_report
from .model import RelationModel, build_model
from .trainer import evaluate, load_checkpoint, predict, save_checkpoint, train

__all__ = [
    "TrainConfig", "Instance", "LabelSpace", "expand_multilabel",
    "generate_synthetic", "load_instances", "pad_truncate", "save_instances",
    "BiaffineParams", "MemoryStore", "build_fixed_keys", "score_biaffine",
    "score_dot", "EvalReport", "compute_report", "RelationModel", "build_model",
    "evaluate", "load_checkpoint", "predict", "save_checkpoint", "train",
]

__version__ = "0.1.0"
