"""Video side: expert features in, one embedding per expert out.

Tokens are laid out per expert as [aggregate, feature_1 .. feature_cap]
with padding masked out, so the sequence length is always
num_experts * (cap + 1). Each feature token is the sum of its projected
feature, the expert identity embedding, and the temporal embedding of its
one-second bucket; the aggregate token starts from a pooled summary of
the expert's projected features.

Feature rows are canonically ordered (by timestamp, then raw bytes)
before assembly, which makes the encoder output bit-identical under
input permutations.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import (
    AttentionConfig,
    Embedding,
    Linear,
    Parameter,
    Tensor,
    TransformerEncoder,
    concat,
    dropout,
    masked_max,
    stack,
)
from ..config import ModelConfig
from ..data.manifest import ExpertFeatures, ExpertSpec
from ..errors import ContractError, DimensionError

def num_buckets(t_max: float) -> int:
    """Number of one-second feature buckets for a dataset horizon."""
    if t_max <= 0:
        raise ContractError("t_max must be positive")
    return int(math.ceil(t_max))


def temporal_bucket(t: float, t_max: float, clamp: bool = False) -> int:
    """One-based bucket of a timestamp: t in [b-1, b) maps to bucket b.

    Timestamps at or past t_max raise unless clamping is enabled, in
    which case they land in the last bucket.
    """
    d = num_buckets(t_max)
    if t < 0.0:
        raise ContractError(f"timestamp {t} is negative")
    if t >= t_max:
        if not clamp:
            raise ContractError(f"timestamp {t} is not below t_max {t_max}")
        return d
    return int(math.floor(t)) + 1


def _stable_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass
class PreparedVideos:
    """Numpy-side batch assembly, ready for the trainable forward pass."""

    features: list[np.ndarray]      # per expert [B, cap, native_dim]
    valid: list[np.ndarray]         # per expert [B, cap] bool
    bucket_rows: list[np.ndarray]   # per expert [B, cap] int rows into the temporal table
    presence: np.ndarray            # [B, N] bool
    token_mask: np.ndarray          # [B, N * (cap + 1)] bool
    agg_positions: np.ndarray       # [N] int

    @property
    def batch_size(self) -> int:
        return self.presence.shape[0]


class VideoEncoder:
    """Projection bank, identity/temporal embeddings, and fusion encoder."""

    def __init__(self, cfg: ModelConfig, experts: list[ExpertSpec], t_max: float,
                 rng: np.random.Generator):
        if not experts:
            raise ContractError("video encoder needs at least one expert")
        self.cfg = cfg
        self.experts = list(experts)
        self.t_max = float(t_max)
        self.buckets = num_buckets(t_max)
        self.projections = [
            Linear(spec.native_dim, cfg.d_model, rng, f"video.project.{spec.name}")
            for spec in self.experts
        ]
        self.expert_table = Embedding(len(experts), cfg.d_model, rng, "video.expert")
        # rows 0..D-1 are buckets 1..D, row D is the aggregate slot,
        # row D+1 marks unknown/non-temporal positions
        self.temporal_table = Embedding(self.buckets + 2, cfg.d_model, rng, "video.temporal")
        if cfg.encoder == "transformer":
            self.fusion = TransformerEncoder(
                AttentionConfig(cfg.d_model, cfg.heads), cfg.layers,
                cfg.intermediate_dim, rng, "video.fusion",
            )
        else:
            self.fusion = None

    @property
    def agg_row(self) -> int:
        return self.buckets

    @property
    def unk_row(self) -> int:
        return self.buckets + 1

    def bucket_row(self, t: float) -> int:
        return temporal_bucket(t, self.t_max, clamp=self.cfg.clamp_timestamps) - 1

    # ------------------------------------------------------------------

    def prepare(self, feature_dicts: list[dict[str, ExpertFeatures | None]],
                video_ids: list[str] | None = None,
                temporal: str | None = None) -> PreparedVideos:
        """Pad, canonically order, and bucket a batch of feature dicts.

        temporal overrides the configured bucket mode; "unk" routes every
        feature to the unknown-time row.
        """
        mode = temporal if temporal is not None else self.cfg.temporal
        if mode not in ("buckets", "unk"):
            raise ContractError(f"unknown temporal mode {mode!r}")
        b = len(feature_dicts)
        if b == 0:
            raise DimensionError("empty video batch")
        if video_ids is None:
            video_ids = [str(i) for i in range(b)]
        cap = self.cfg.max_features_per_expert
        n = len(self.experts)

        features, valid, bucket_rows = [], [], []
        presence = np.zeros((b, n), dtype=bool)
        for e, spec in enumerate(self.experts):
            feats = np.zeros((b, cap, spec.native_dim))
            mask = np.zeros((b, cap), dtype=bool)
            rows = np.full((b, cap), self.unk_row, dtype=np.int64)
            for i, fd in enumerate(feature_dicts):
                ef = fd.get(spec.name)
                if ef is None or ef.count == 0:
                    continue
                presence[i, e] = True
                order = sorted(range(ef.count),
                               key=lambda j: (ef.timestamps[j], ef.features[j].tobytes()))
                order = order[:cap]
                k = len(order)
                feats[i, :k] = ef.features[order]
                mask[i, :k] = True
                if spec.temporal and mode == "buckets":
                    assigned = [self.bucket_row(float(ef.timestamps[j])) for j in order]
                    if self.cfg.feature_order == "shuffled":
                        shuffle_rng = np.random.default_rng(np.random.SeedSequence(
                            entropy=(self.cfg.feature_order_seed,
                                     _stable_seed(video_ids[i]), e)))
                        assigned = [assigned[j] for j in shuffle_rng.permutation(k)]
                    rows[i, :k] = assigned
            features.append(feats)
            valid.append(mask)
            bucket_rows.append(rows)

        token_mask = np.ones((b, n * (cap + 1)), dtype=bool)
        for e in range(n):
            token_mask[:, e * (cap + 1) + 1:(e + 1) * (cap + 1)] = valid[e]
        agg_positions = np.arange(n) * (cap + 1)
        return PreparedVideos(features, valid, bucket_rows, presence,
                              token_mask, agg_positions)

    def _pool(self, projected: Tensor, valid: np.ndarray) -> Tensor:
        """Aggregate-token initialization over the valid projected features."""
        mode = self.cfg.agg_init
        b, _, d = projected.shape
        if mode == "zero":
            return Tensor(np.zeros((b, d)))
        if mode == "max":
            return masked_max(projected, valid[:, :, None], axis=1, empty_zero=True)
        counts = np.maximum(valid.sum(axis=1, keepdims=True), 1)
        return (projected * valid[:, :, None]).sum(axis=1) / counts

    def pooled_outputs(self, prepared: PreparedVideos) -> Tensor:
        """Per-expert pooled projections: the no-fusion baseline encoder.

        Missing experts come out as exact zero vectors.
        """
        outs = []
        for e in range(len(self.experts)):
            projected = self.projections[e](Tensor(prepared.features[e]))
            outs.append(self._pool(projected, prepared.valid[e]))
        return stack(outs, axis=1)

    def forward(self, prepared: PreparedVideos, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Encode a prepared batch into [B, N, d_model] expert embeddings."""
        if self.cfg.encoder == "none":
            return self.pooled_outputs(prepared)

        drop = self.cfg.dropout if train else 0.0
        n = len(self.experts)
        d = self.cfg.d_model
        parts: list[Tensor] = []
        for e in range(n):
            projected = self.projections[e](Tensor(prepared.features[e]))
            pooled = self._pool(projected, prepared.valid[e])
            ident = self.expert_table.table.take(np.array([e]), axis=0)
            t_feat = self.temporal_table.table.take(prepared.bucket_rows[e], axis=0)
            t_agg = self.temporal_table.table.take(np.array([self.agg_row]), axis=0)
            agg_token = (pooled + ident + t_agg).reshape(prepared.batch_size, 1, d)
            feat_tokens = projected + ident.reshape(1, 1, d) + t_feat
            parts.append(agg_token)
            parts.append(feat_tokens)
        seq = concat(parts, axis=1)
        seq = dropout(seq, drop, rng)
        fused = self.fusion(seq, prepared.token_mask, drop=drop, rng=rng)
        return fused.take(prepared.agg_positions, axis=1)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for proj in self.projections:
            out.extend(proj.parameters())
        out.extend(self.expert_table.parameters())
        out.extend(self.temporal_table.parameters())
        if self.fusion is not None:
            out.extend(self.fusion.parameters())
        return out
