"""Experiment configuration dataclasses: model, tuning mode, optimization.

These are the deterministic constructor inputs for every run; sweeps vary
their fields. Validation happens at construction so that bad grids fail
before any work starts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Optional

from .graphs import Vocab

PEFT_MODES = ("full", "adaptergnn", "adapter_seq", "adapter_par", "lora",
              "bitfit", "ia3", "prompt_feat", "prompt_node", "partial_k")


class ConfigError(ValueError):
    """A configuration value violates its declared invariant."""


@dataclass(frozen=True)
class ModelConfig:
    """Backbone architecture description.

    ``mlp_hidden=None`` resolves to twice the embedding dimension, the
    convention every sweep keeps when varying d.
    """
    emb_dim: int = 300
    num_layers: int = 5
    mlp_hidden: Optional[int] = None
    num_tasks: int = 1
    dropout: float = 0.5
    vocab: Vocab = field(default_factory=Vocab)

    def __post_init__(self):
        if self.emb_dim < 1:
            raise ConfigError(f"emb_dim must be >= 1, got {self.emb_dim}")
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.mlp_hidden is not None and self.mlp_hidden < 1:
            raise ConfigError(f"mlp_hidden must be >= 1, got {self.mlp_hidden}")
        if self.num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else 2 * self.emb_dim


@dataclass(frozen=True)
class PeftConfig:
    """Tuning-mode selector plus the mode-relevant hyperparameters.

    ``tune_backbone_bias=None`` resolves to True exactly for the
    dual-adapter mode (its recipe also tunes the backbone MLP biases) and
    False elsewhere. Backbone BN affine parameters stay frozen in that
    mode unless ``tune_backbone_bn`` is set.
    """
    mode: str = "full"
    bottleneck: int = 15
    lora_rank: int = 10
    scaling_init: float = 0.01
    tune_backbone_bias: Optional[bool] = None
    tune_backbone_bn: bool = False
    k: int = 1

    def __post_init__(self):
        if self.mode not in PEFT_MODES:
            raise ConfigError(
                f"unknown tuning mode {self.mode!r}; choose from {', '.join(PEFT_MODES)}")
        if self.bottleneck < 0:
            raise ConfigError(f"bottleneck must be >= 0, got {self.bottleneck}")
        if self.lora_rank < 1:
            raise ConfigError(f"lora_rank must be >= 1, got {self.lora_rank}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")

    @property
    def bias_tuning(self) -> bool:
        if self.tune_backbone_bias is None:
            return self.mode == "adaptergnn"
        return self.tune_backbone_bias


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr >= 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


def config_dict(model: ModelConfig, peft: PeftConfig, train: TrainConfig) -> dict:
    """Flat, JSON-safe view of a full experiment configuration."""
    out = {}
    for prefix, cfg in (("model", model), ("peft", peft), ("train", train)):
        d = asdict(cfg)
        for key, val in d.items():
            if key == "vocab":
                out["model.node_vocab"] = list(cfg.vocab.node)
                out["model.edge_vocab"] = list(cfg.vocab.edge)
            elif key == "betas":
                out["train.betas"] = list(val)
            else:
                out[f"{prefix}.{key}"] = val
    return out


# keys that steer output plumbing, not the computation itself
NON_SEMANTIC_KEYS = frozenset({"out", "force", "yes", "jobs", "csv", "config"})


def config_fingerprint(cfg: dict) -> str:
    """Short stable hash of a flat config dict.

    Output-plumbing keys are excluded, so re-running the same experiment
    into a different directory yields the same fingerprint.
    """
    semantic = {k: v for k, v in cfg.items() if k not in NON_SEMANTIC_KEYS}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"),
                      default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
