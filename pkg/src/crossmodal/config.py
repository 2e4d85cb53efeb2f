"""Model and training configuration with JSON round-tripping.

Defaults follow the reference full-scale recipe; tiny_train_config() is
the small preset used by the fast tests and examples. Configs are frozen
dataclasses so a config value can never drift mid-run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError

AGG_INIT_MODES = ("zero", "mean", "max")
ENCODER_VARIANTS = ("transformer", "none")
CAPTION_SOURCES = ("tokens", "vectors")
CAPTION_AGGS = ("max", "mean")
TEMPORAL_MODES = ("buckets", "unk")
FEATURE_ORDERS = ("ordered", "shuffled")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 512
    layers: int = 4
    heads: int = 4
    intermediate_dim: int = 3072
    d_h: int = 256
    agg_init: str = "max"
    encoder: str = "transformer"
    caption_source: str = "tokens"
    caption_agg: str = "max"
    normalize_video: bool = True
    dropout: float = 0.1
    temporal: str = "buckets"
    feature_order: str = "ordered"
    feature_order_seed: int = 0
    max_features_per_expert: int = 30
    max_tokens: int = 30
    remove_stop_words: bool = False
    clamp_timestamps: bool = False

    def __post_init__(self) -> None:
        if self.d_model < 1 or self.layers < 1 or self.heads < 1:
            raise ConfigError("d_model, layers, and heads must be positive")
        if self.d_model % self.heads != 0:
            raise ConfigError("heads must divide d_model")
        if self.intermediate_dim < 1 or self.d_h < 1:
            raise ConfigError("intermediate_dim and d_h must be positive")
        if self.agg_init not in AGG_INIT_MODES:
            raise ConfigError(f"agg_init must be one of {AGG_INIT_MODES}")
        if self.encoder not in ENCODER_VARIANTS:
            raise ConfigError(f"encoder must be one of {ENCODER_VARIANTS}")
        if self.caption_source not in CAPTION_SOURCES:
            raise ConfigError(f"caption_source must be one of {CAPTION_SOURCES}")
        if self.caption_agg not in CAPTION_AGGS:
            raise ConfigError(f"caption_agg must be one of {CAPTION_AGGS}")
        if self.temporal not in TEMPORAL_MODES:
            raise ConfigError(f"temporal must be one of {TEMPORAL_MODES}")
        if self.feature_order not in FEATURE_ORDERS:
            raise ConfigError(f"feature_order must be one of {FEATURE_ORDERS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.max_features_per_expert < 1 or self.max_tokens < 1:
            raise ConfigError("max_features_per_expert and max_tokens must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 32
    initial_lr: float = 5e-5
    lr_decay: float = 0.95
    lr_decay_every: int = 1000
    total_steps: int = 50000
    margin: float = 0.05
    seed: int = 0
    grad_clip: float | None = None
    freeze_caption_encoder: bool = False
    log_every: int = 10
    eval_every: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for in-batch negatives")
        if self.initial_lr <= 0:
            raise ConfigError("initial_lr must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")
        if self.log_every < 1 or self.eval_every < 0:
            raise ConfigError("log_every must be >= 1 and eval_every >= 0")


def tiny_model_config(**overrides: Any) -> ModelConfig:
    """Small model for fast experiments and the test suite."""
    base = dict(
        d_model=32,
        layers=1,
        heads=2,
        intermediate_dim=64,
        d_h=32,
        dropout=0.0,
        max_features_per_expert=4,
        max_tokens=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_train_config(**overrides: Any) -> TrainConfig:
    base = dict(
        model=tiny_model_config(),
        batch_size=32,
        initial_lr=2e-3,
        lr_decay=0.95,
        lr_decay_every=1000,
        total_steps=2000,
        margin=0.05,
        log_every=25,
        eval_every=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def config_to_dict(cfg: TrainConfig) -> dict:
    out = dataclasses.asdict(cfg)
    return out


def config_from_dict(raw: dict) -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    model_raw = raw.pop("model", {})
    if not isinstance(model_raw, dict):
        raise ConfigError("config 'model' must be an object")
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)} - {"model"}
    unknown = set(model_raw) - model_fields
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    unknown = set(raw) - train_fields
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    try:
        model = ModelConfig(**model_raw)
        return TrainConfig(model=model, **raw)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def config_to_json(cfg: TrainConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=1, sort_keys=True)


def config_from_json(text: str) -> TrainConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


# Ablation keys accepted by --ablation KEY=VALUE. Each maps onto a config
# field; "model." prefixes are implied for model-level fields.
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"model"}
_ALIASES = {"lr": "initial_lr", "stop_words": "remove_stop_words"}


def _parse_value(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "remove", "on"):
            return True
        if low in ("false", "0", "no", "keep", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if current is None:
        return float(raw)
    return raw


def apply_ablations(cfg: TrainConfig, assignments: dict[str, str]) -> TrainConfig:
    """Override config fields from KEY=VALUE ablation selectors."""
    model_updates: dict[str, Any] = {}
    train_updates: dict[str, Any] = {}
    for key, raw in assignments.items():
        name = _ALIASES.get(key, key)
        if name in _MODEL_KEYS:
            current = getattr(cfg.model, name)
            model_updates[name] = _parse_value(raw, current)
        elif name in _TRAIN_KEYS:
            current = getattr(cfg, name)
            train_updates[name] = _parse_value(raw, current)
        else:
            raise ConfigError(f"unknown ablation key {key!r}")
    model = dataclasses.replace(cfg.model, **model_updates) if model_updates else cfg.model
    return dataclasses.replace(cfg, model=model, **train_updates)


def architecture_fingerprint(model: ModelConfig, expert_specs: list[tuple[str, int, bool]],
                             vocab_size: int, t_max: float) -> str:
    """Hash of everything that determines parameter shapes and meaning."""
    payload = {
        "model": dataclasses.asdict(model),
        "experts": expert_specs,
        "vocab_size": vocab_size,
        "t_max": t_max,
    }
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
