"""Caption side: token ids (or precomputed vectors) to per-expert queries.

A caption becomes a single pooled vector h, then one gated unit per
expert turns h into a unit-length query phi_e, and a bias-free softmax
over learned anchors turns h into mixture weights w over the experts.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import (
    Embedding,
    Linear,
    Parameter,
    Tensor,
    dropout,
    l2_normalize,
    masked_max,
    normal_init,
    softmax,
    stack,
)
from ..config import ModelConfig
from ..data.tokenizer import PAD_ID
from ..errors import ContractError, DimensionError

NORM_FLOOR = 1e-12


class GatedUnit:
    """Project, self-gate, and normalize: z = y * sigmoid(gate(y)), y = W h + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str):
        self.project = Linear(d_in, d_out, rng, f"{name}.project")
        self.gate = Linear(d_out, d_out, rng, f"{name}.gate")

    def __call__(self, h: Tensor) -> tuple[Tensor, int]:
        y = self.project(h)
        z = y * self.gate(y).sigmoid()
        floor_hits = int((np.linalg.norm(z.data, axis=-1) <= NORM_FLOOR).sum())
        return l2_normalize(z, axis=-1, floor=NORM_FLOOR), floor_hits

    def parameters(self) -> list[Parameter]:
        return self.project.parameters() + self.gate.parameters()


class CaptionEncoder:
    """Pooled text vector feeding per-expert gated queries and mixture weights."""

    def __init__(self, cfg: ModelConfig, num_experts: int, vocab_size: int,
                 rng: np.random.Generator):
        if num_experts < 1:
            raise ContractError("caption encoder needs at least one expert")
        self.cfg = cfg
        self.num_experts = num_experts
        self.vocab_size = vocab_size
        if cfg.caption_source == "tokens":
            self.token_table = Embedding(vocab_size, cfg.d_h, rng, "caption.token")
        else:
            self.token_table = None
        self.units = [
            GatedUnit(cfg.d_h, cfg.d_model, rng, f"caption.unit{e}")
            for e in range(num_experts)
        ]
        self.anchors = Parameter(normal_init(rng, (num_experts, cfg.d_h)),
                                 "caption.anchors")
        # how often a gated output needed the norm floor (degenerate inputs)
        self.floor_hits = 0

    def pool_tokens(self, token_ids: list[list[int]], train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        """Embed and pool padded token id lists into h of shape [B, d_h]."""
        if self.token_table is None:
            raise ContractError("encoder is configured for precomputed caption vectors")
        if not token_ids:
            raise DimensionError("empty caption batch")
        if any(len(ids) == 0 for ids in token_ids):
            raise ContractError("caption with no tokens")
        width = max(len(ids) for ids in token_ids)
        ids = np.full((len(token_ids), width), PAD_ID, dtype=np.int64)
        valid = np.zeros((len(token_ids), width), dtype=bool)
        for i, row in enumerate(token_ids):
            ids[i, :len(row)] = row
            valid[i, :len(row)] = True
        emb = self.token_table(ids)
        emb = dropout(emb, self.cfg.dropout if train else 0.0, rng)
        if self.cfg.caption_agg == "max":
            return masked_max(emb, valid[:, :, None], axis=1)
        counts = valid.sum(axis=1, keepdims=True)
        return (emb * valid[:, :, None]).sum(axis=1) / counts

    def pool_vectors(self, vectors: np.ndarray) -> Tensor:
        """Adapt precomputed caption vectors of shape [B, d_h] as h."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != self.cfg.d_h:
            raise DimensionError(
                f"caption vectors must be [B, {self.cfg.d_h}], got {vectors.shape}")
        return Tensor(vectors)

    def forward_pooled(self, h: Tensor) -> tuple[Tensor, Tensor]:
        """Turn h [B, d_h] into queries phi [B, N, d_model] and weights w [B, N]."""
        phis = []
        for unit in self.units:
            phi, hits = unit(h)
            self.floor_hits += hits
            phis.append(phi)
        phi = stack(phis, axis=1)
        logits = h.matmul(self.anchors.swapaxes(0, 1))
        return phi, softmax(logits, axis=-1)

    def forward_tokens(self, token_ids: list[list[int]], train: bool = False,
                       rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        return self.forward_pooled(self.pool_tokens(token_ids, train, rng))

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        if self.token_table is not None:
            out.extend(self.token_table.parameters())
        for unit in self.units:
            out.extend(unit.parameters())
        out.append(self.anchors)
        return out
