"""Training configuration.  Defaults follow the published training schedule;
every field can be overridden from a JSON or YAML file."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .encoding import ConfigError

MODES = ("graphtrex", "spantrex")


@dataclass
class TrainConfig:
    # schedule
    epochs: int = 20
    batch_size_docs: int = 8
    warmup_entity_only_epochs: int = 2
    learning_rate: float = 8e-4
    encoder_learning_rate: float = 3e-5
    lr_warmup_fraction: float = 0.1  # share of optimizer steps spent in linear LR warmup
    seed: int = 0

    # span model
    dropout: float = 0.35
    k_max: int = 7
    width_dim: int = 7
    span_dim: int = 1000
    span_layers: int = 1
    hidden_dim: int = 1000
    type_dim: int = 25
    relation_candidates: str = "predicted"  # training pairs: "predicted" entities or "gold" ones
    relation_negative_rate: float | None = None  # keep this share of NO-RELATION pairs; None keeps all

    # encoder
    encoder: str = "hash"  # "hash" for the toy encoder, otherwise a pretrained model name
    encoder_dim: int = 32
    encoder_layers: int = 1
    encoder_heads: int = 2
    window_size: int = 512
    freeze_encoder: bool = False
    max_tokens: int = 100_000  # longer documents are rejected rather than truncated

    # graph + HGT
    mode: str = "graphtrex"
    tau: float = 0.4
    delta: float = 0.5
    window_length: int = 512
    hgt_layers: int = 2
    hgt_heads: int = 2
    hgt_dropout: float = 0.3
    hgt_iterations: int = 2
    share_iterations: bool = True
    residual_coefficient: float = 1.0
    use_context_nodes: bool = True
    use_window_nodes: bool = True
    reverse_edges: bool = True

    schema: str = "I2B2"

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.window_size < 4:
            raise ConfigError(f"window_size must be >= 4, got {self.window_size}")
        if self.span_dim % self.hgt_heads:
            raise ConfigError(f"span_dim {self.span_dim} must be divisible by hgt_heads {self.hgt_heads}")
        if not 0 <= self.tau <= 1:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.relation_candidates not in ("gold", "predicted"):
            raise ConfigError(f"relation_candidates must be 'gold' or 'predicted', got {self.relation_candidates!r}")
        if self.epochs < 0 or self.batch_size_docs < 1 or self.k_max < 1:
            raise ConfigError("epochs, batch_size_docs and k_max must be positive")
        if self.residual_coefficient < 0:
            raise ConfigError("residual_coefficient must be >= 0")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj).validate()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            import yaml

            obj = yaml.safe_load(text) or {}
        else:
            obj = json.loads(text)
        return cls.from_dict(obj)
