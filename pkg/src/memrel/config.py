"""Run configuration: every tunable in one dataclass."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.001
    optimizer: str = "adam"
    lam: float = 0.3
    attention: str = "dot"          # dot | biaffine
    response: str = "baseline"      # baseline | value | key
    coefficient_mode: str = "dynamic"  # dynamic | balance
    key_mode: str = "dynamic"       # dynamic | fixed
    pad_len: int = 100
    layers: int = 2
    d_w: int = 50
    d_s: int = 50
    d_c: int = 0
    subword_symbol_dim: int = 25
    kernel_widths: tuple[int, ...] = (1, 2, 3)
    highway_layers: int = 1
    encoder_kernel: int = 3
    hidden: int = 64
    mlp_depth: int = 2
    n_r: int = 0                    # filled from the label space
    n_c: int = 0
    mlp_dropout: float = 0.5
    memory_dropout: float = 0.2
    patience: int = 5
    bpe_merges: int = 1000
    word_emb_path: str | None = None
    ctx_emb_path: str | None = None
    word_trainable: bool | None = None  # None: trainable iff randomly initialized
    attention_relu: bool = True
    share_encoder: bool = True
    mask_pad: bool = False
    exclude_self: bool = False
    coef_pass_use_memory: bool = True
    memory_subsample: int = 0       # 0 = memorize the whole training set
    clean_key_pass: bool = False    # recompute keys without dropout before writing

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.attention not in ("dot", "biaffine"):
            raise ValueError(f"unknown attention mode: {self.attention!r}")
        if self.response not in ("baseline", "value", "key"):
            raise ValueError(f"unknown response mode: {self.response!r}")
        if self.coefficient_mode not in ("dynamic", "balance"):
            raise ValueError(f"unknown coefficient mode: {self.coefficient_mode!r}")
        if self.key_mode not in ("dynamic", "fixed"):
            raise ValueError(f"unknown key mode: {self.key_mode!r}")
        if self.key_mode == "fixed" and self.response == "key":
            raise ValueError("fixed keys can only be used with the value response")
        if isinstance(self.kernel_widths, list):
            self.kernel_widths = tuple(self.kernel_widths)

    @property
    def d_e(self) -> int:
        return self.d_w + self.d_s + self.d_c

    @property
    def d_r(self) -> int:
        return 4 * self.d_e * self.layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_widths"] = list(self.kernel_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)
