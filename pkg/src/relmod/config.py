"""Run configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class RunConfig:
    # model dims; d_* of 0 means "same as hidden"
    hidden: int = 64
    embed: int = 32
    n_context_heads: int = 16
    n_question_heads: int = 2
    d_g: int = 0
    d_r: int = 0
    d_f: int = 0
    d_z: int = 0
    activation: str = "tanh"
    # losses
    alpha: float = 0.0005
    squared_penalty: bool = False
    lambda_aux: float = 1.0
    # optimizer
    lr: float = 0.0008
    lr_decay: float = 0.5
    patience: int = 3
    batch_size: int = 32
    epochs: int = 15
    seed: int = 0
    precision: str = "float64"
    # decoding
    tau: float = 0.0
    max_span_len: int = 15
    # data: explicit paths win over the synthetic generator
    train_path: str = ""
    dev_path: str = ""
    synthetic_train: int = 2000
    synthetic_dev: int = 500
    answerable_ratio: float = 0.5
    facts_per_example: int = 4
    data_seed: int = 0
    min_count: int = 1
    # variants
    use_pooled_summary: bool = False
    baseline_fc_na: bool = False
    use_augment: bool = True
    augment_bias: bool = False

    def __post_init__(self):
        if self.n_question_heads != 2:
            raise ValueError("the relation network takes exactly 2 question heads")
        if self.n_context_heads < 1:
            raise ValueError("n_context_heads must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be float64 or float32")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def dims(self) -> dict[str, int]:
        return {k: getattr(self, k) or self.hidden for k in ("d_g", "d_r", "d_f", "d_z")}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_value(key: str, raw: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ValueError(f"unknown config key {key!r}")
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(values)


def dump_config(config: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_dict().items())
