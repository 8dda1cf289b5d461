"""Flat run configuration.

A config file is either a JSON object or ``key = value`` lines (``#``
starts a comment). Every field has a default; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .lm import LMConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    max_vocab: int = 2000
    n_layers: int = 2
    n_heads: int = 2
    hidden_dim: int = 64
    max_positions: int = 256
    tie_embeddings: bool = True
    init_std: float = 0.125
    embed_std: float = 0.5
    # prompts
    knowledge_prompts: int = 5
    context_prompts: int = 10
    knowledge_max_tokens: int = 64
    context_max_tokens: int = 128
    # optimisation
    batch_size: int = 8
    lr: float = 5e-5
    warmup_steps: int = 200
    total_steps: int = 1000
    mode: str = "kesconv"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    # decoding / retrieval
    max_new_tokens: int = 32
    embed_mode: str = "mean_pooled_frozen"
    external_embeddings: str = ""
    # paths
    dialogues: str = ""
    kb: str = ""
    vocab: str = ""
    index: str = ""
    out: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.embed_mode not in ("mean_pooled_frozen", "external_file"):
            raise ConfigError(f"unknown embed_mode {self.embed_mode!r}")
        if self.embed_mode == "external_file" and not self.external_embeddings:
            raise ConfigError("embed_mode external_file needs external_embeddings")
        for name in ("knowledge_prompts", "context_prompts", "max_new_tokens", "max_vocab"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        self.train_config()  # validates the optimisation fields

    def lm_config(self, vocab_size):
        return LMConfig(vocab_size=vocab_size, n_layers=self.n_layers, n_heads=self.n_heads,
                        hidden_dim=self.hidden_dim, max_positions=self.max_positions,
                        tie_embeddings=self.tie_embeddings, init_std=self.init_std, embed_std=self.embed_std)

    def train_config(self):
        return TrainConfig(batch_size=self.batch_size, lr=self.lr, warmup_steps=self.warmup_steps,
                           total_steps=self.total_steps, seed=self.seed, mode=self.mode, beta1=self.beta1,
                           beta2=self.beta2, eps=self.adam_eps, weight_decay=self.weight_decay,
                           grad_clip=self.grad_clip)

    def replace(self, **changes):
        return from_dict({**self.to_dict(), **changes})

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("true", "1", "yes"):
                return True
            if str(value).lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            if isinstance(value, bool):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} (expected {kind})") from exc


def from_dict(values):
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


def parse_config_text(text):
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            values = json.loads(stripped)
        except ValueError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config JSON must be an object")
        return from_dict(values)
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key {key}")
        values[key] = value
    return from_dict(values)


def load_config(path=None, **overrides):
    """Defaults, then the file at ``path`` (if any), then non-None overrides."""
    base = parse_config_text(Path(path).read_text()) if path else RunConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return base.replace(**overrides) if overrides else base
