"""Flat run configuration: every model and training knob plus paths.

Config files are UTF-8 lines of `key = value` with `#` comments; unknown
keys are rejected. Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    model: str = "ntt"
    d: int = 32
    d_e: int = 16
    d_v: int = 16
    d_c: int = 16
    d_a: int = 0
    d_r: int = 0
    dropout_left: float = 0.3
    dropout_right: float = 0.7
    dropout_joint: float = 0.8
    dropout_mh: float = 0.5
    payload: str = "attended"
    channels: int = 2
    max_regions: int = 6
    max_len: int = 20
    base_lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 10
    anneal_factor: float = 0.8
    anneal_every: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    beam: int = 3
    eval_split: str = "val"
    target_accuracy: float = 0.0
    shuffle: bool = True
    dataset: str = ""
    checkpoint: str = ""
    output: str = ""

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(kind=self.model, d=self.d, d_e=self.d_e, d_v=self.d_v,
                           d_c=self.d_c, d_a=self.d_a, d_r=self.d_r,
                           dropout_left=self.dropout_left, dropout_right=self.dropout_right,
                           dropout_joint=self.dropout_joint, dropout_mh=self.dropout_mh,
                           payload=self.payload, channels=self.channels,
                           max_regions=self.max_regions, max_len=self.max_len,
                           init_seed=self.seed)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(base_lr=self.base_lr, batch_size=self.batch_size,
                           epochs=self.epochs, anneal_factor=self.anneal_factor,
                           anneal_every=self.anneal_every, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps, grad_clip=self.grad_clip,
                           seed=self.seed, eval_split=self.eval_split,
                           target_accuracy=self.target_accuracy, shuffle=self.shuffle)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as bool")
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, then file values, then overrides."""
    cfg = RunConfig()
    values: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as f:
            values.update(parse_config_text(f.read()))
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(raw)) if isinstance(raw, str) else raw
    for key, val in values.items():
        setattr(cfg, key, val)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
