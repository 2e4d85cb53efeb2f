"""Neural-net building blocks: linear, layer norm, embeddings, attention.

Weights are initialized from N(0, 0.02); biases and layer-norm shifts start
at zero, layer-norm scales at one. Every block exposes parameters() with
stable ordering so the optimizer and checkpointing see a fixed layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, DimensionError
from .tensor import Parameter, Tensor, dropout, masked_softmax

INIT_STD = 0.02
LAYER_NORM_EPS = 1e-8


def normal_init(rng: np.random.Generator, shape: tuple[int, ...], std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


@dataclass(frozen=True)
class AttentionConfig:
    """Shape configuration for multi-head self-attention."""

    model_dim: int
    num_heads: int

    def __post_init__(self) -> None:
        if self.model_dim <= 0 or self.num_heads <= 0:
            raise ConfigError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"num_heads ({self.num_heads}) must divide model_dim ({self.model_dim})"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


class Linear:
    """Affine map y = x W + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str):
        self.weight = Parameter(normal_init(rng, (d_in, d_out)), f"{name}.weight")
        self.bias = Parameter(np.zeros(d_out), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(
                f"linear expected last dim {self.weight.shape[0]}, got {x.shape[-1]}"
            )
        return x.matmul(self.weight) + self.bias

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class LayerNorm:
    """Normalize the last axis to zero mean and unit variance, then affine."""

    def __init__(self, dim: int, name: str):
        self.scale = Parameter(np.ones(dim), f"{name}.scale")
        self.shift = Parameter(np.zeros(dim), f"{name}.shift")

    def __call__(self, x: Tensor) -> Tensor:
        return self.normalize(x) * self.scale + self.shift

    def normalize(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + LAYER_NORM_EPS).sqrt()

    def parameters(self) -> list[Parameter]:
        return [self.scale, self.shift]


class Embedding:
    """Trainable lookup table of row vectors."""

    def __init__(self, count: int, dim: int, rng: np.random.Generator, name: str):
        self.table = Parameter(normal_init(rng, (count, dim)), f"{name}.table")

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.table.shape[0]):
            raise DimensionError("embedding id out of range")
        return self.table.take(ids, axis=0)

    def parameters(self) -> list[Parameter]:
        return [self.table]


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over a batch of sequences.

    Takes x of shape [B, L, D] and a boolean key mask of shape [B, L].
    Invalid key positions receive zero attention probability; queries at
    invalid positions still produce (ignored) outputs.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, name: str):
        self.cfg = cfg
        d = cfg.model_dim
        self.query = Linear(d, d, rng, f"{name}.query")
        self.key = Linear(d, d, rng, f"{name}.key")
        self.value = Linear(d, d, rng, f"{name}.value")
        self.out = Linear(d, d, rng, f"{name}.out")

    def __call__(self, x: Tensor, key_mask: np.ndarray,
                 attn_dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
        if x.ndim != 3:
            raise DimensionError("attention expects [batch, length, dim] input")
        b, length, d = x.shape
        if d != self.cfg.model_dim:
            raise DimensionError(f"attention expected dim {self.cfg.model_dim}, got {d}")
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (b, length):
            raise DimensionError("key mask must have shape [batch, length]")

        h, hd = self.cfg.num_heads, self.cfg.head_dim

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(b, length, h, hd).swapaxes(1, 2)

        q = split_heads(self.query(x))
        k = split_heads(self.key(x))
        v = split_heads(self.value(x))

        scores = q.matmul(k.swapaxes(-1, -2)) * (1.0 / np.sqrt(hd))
        probs = masked_softmax(scores, key_mask[:, None, None, :], axis=-1)
        probs = dropout(probs, attn_dropout, rng)
        ctx = probs.matmul(v)
        merged = ctx.swapaxes(1, 2).reshape(b, length, d)
        return self.out(merged)

    def parameters(self) -> list[Parameter]:
        return (self.query.parameters() + self.key.parameters()
                + self.value.parameters() + self.out.parameters())


class FeedForward:
    """Two-layer position-wise MLP with GELU."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, name: str):
        self.expand = Linear(dim, hidden, rng, f"{name}.expand")
        self.project = Linear(hidden, dim, rng, f"{name}.project")

    def __call__(self, x: Tensor) -> Tensor:
        return self.project(self.expand(x).gelu())

    def parameters(self) -> list[Parameter]:
        return self.expand.parameters() + self.project.parameters()


class EncoderLayer:
    """Post-norm residual block: attention then feed-forward."""

    def __init__(self, cfg: AttentionConfig, ff_hidden: int,
                 rng: np.random.Generator, name: str):
        self.attn = MultiHeadSelfAttention(cfg, rng, f"{name}.attn")
        self.norm_attn = LayerNorm(cfg.model_dim, f"{name}.norm_attn")
        self.ff = FeedForward(cfg.model_dim, ff_hidden, rng, f"{name}.ff")
        self.norm_ff = LayerNorm(cfg.model_dim, f"{name}.norm_ff")

    def __call__(self, x: Tensor, key_mask: np.ndarray, drop: float,
                 rng: np.random.Generator | None) -> Tensor:
        a = self.attn(x, key_mask, attn_dropout=drop, rng=rng)
        x = self.norm_attn(x + dropout(a, drop, rng))
        f = self.ff(x)
        return self.norm_ff(x + dropout(f, drop, rng))

    def parameters(self) -> list[Parameter]:
        return (self.attn.parameters() + self.norm_attn.parameters()
                + self.ff.parameters() + self.norm_ff.parameters())


class TransformerEncoder:
    """Stack of post-norm encoder layers over already-embedded tokens."""

    def __init__(self, cfg: AttentionConfig, num_layers: int, ff_hidden: int,
                 rng: np.random.Generator, name: str):
        if num_layers < 1:
            raise ConfigError("transformer encoder needs at least one layer")
        self.cfg = cfg
        self.layers = [
            EncoderLayer(cfg, ff_hidden, rng, f"{name}.layer{i}")
            for i in range(num_layers)
        ]

    def __call__(self, x: Tensor, key_mask: np.ndarray,
                 drop: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any(axis=-1).all():
            raise ContractError("transformer encoder: a sequence has no valid tokens")
        for layer in self.layers:
            x = layer(x, key_mask, drop, rng)
        return x

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out
