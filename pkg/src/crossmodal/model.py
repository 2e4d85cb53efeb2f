"""Joint retrieval model tying the two encoders together."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, no_grad
from .config import ModelConfig, architecture_fingerprint
from .data.manifest import CaptionRecord, DatasetManifest, ExpertSpec
from .data.tokenizer import Vocabulary
from .encoders import CaptionEncoder, VideoEncoder
from .errors import ConfigError


class RetrievalModel:
    """Video encoder + caption encoder sharing one embedding space."""

    def __init__(self, cfg: ModelConfig, experts: list[ExpertSpec], vocab_size: int,
                 t_max: float, seed: int = 0):
        self.cfg = cfg
        self.experts = list(experts)
        self.vocab_size = vocab_size
        self.t_max = float(t_max)
        self.seed = seed
        ss = np.random.SeedSequence(entropy=(seed, 0x1217))
        rng_video, rng_caption = (np.random.default_rng(s) for s in ss.spawn(2))
        self.video = VideoEncoder(cfg, experts, t_max, rng_video)
        self.caption = CaptionEncoder(cfg, len(experts), vocab_size, rng_caption)
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in model")

    @classmethod
    def from_manifest(cls, cfg: ModelConfig, manifest: DatasetManifest,
                      seed: int = 0) -> "RetrievalModel":
        return cls(cfg, manifest.experts, len(manifest.vocabulary), manifest.t_max, seed)

    def parameters(self) -> list[Parameter]:
        return self.video.parameters() + self.caption.parameters()

    def fingerprint(self) -> str:
        specs = [(e.name, e.native_dim, e.temporal) for e in self.experts]
        return architecture_fingerprint(self.cfg, specs, self.vocab_size, self.t_max)

    # ------------------------------------------------------------------
    # batched no-grad representation paths used by evaluation and stores

    def caption_token_ids(self, record: CaptionRecord, vocab: Vocabulary) -> list[int]:
        return vocab.encode(record.text, max_tokens=self.cfg.max_tokens,
                            remove_stop_words=self.cfg.remove_stop_words)

    def video_representations(self, manifest: DatasetManifest, video_ids: list[str],
                              batch_size: int = 64,
                              temporal: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Encode videos by id into (psi [n, N, d], presence [n, N])."""
        blocks, presences = [], []
        with no_grad():
            for lo in range(0, len(video_ids), batch_size):
                chunk = video_ids[lo:lo + batch_size]
                feats = [manifest.load_video_features(
                    v, clamp_timestamps=self.cfg.clamp_timestamps) for v in chunk]
                prepared = self.video.prepare(feats, chunk, temporal=temporal)
                blocks.append(self.video.forward(prepared).data)
                presences.append(prepared.presence)
        return np.concatenate(blocks, axis=0), np.concatenate(presences, axis=0)

    def caption_representations(self, manifest: DatasetManifest,
                                captions: list[CaptionRecord],
                                batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Encode captions into (phi [n, N, d], w [n, N])."""
        phis, ws = [], []
        with no_grad():
            for lo in range(0, len(captions), batch_size):
                chunk = captions[lo:lo + batch_size]
                if self.cfg.caption_source == "vectors":
                    vecs = np.stack([manifest.load_caption_vector(c.caption_id)
                                     for c in chunk])
                    h = self.caption.pool_vectors(vecs)
                    phi, w = self.caption.forward_pooled(h)
                else:
                    ids = [self.caption_token_ids(c, manifest.vocabulary) for c in chunk]
                    phi, w = self.caption.forward_tokens(ids)
                phis.append(phi.data)
                ws.append(w.data)
        return np.concatenate(phis, axis=0), np.concatenate(ws, axis=0)

    def encode_pair_batch(self, manifest: DatasetManifest,
                          pairs: list[tuple[str, CaptionRecord]], train: bool,
                          rng: np.random.Generator | None
                          ) -> tuple[Tensor, np.ndarray, Tensor, Tensor]:
        """Trainable forward for aligned (video, caption) pairs.

        Returns (psi, presence, phi, w) with gradients attached when grad
        is enabled.
        """
        video_ids = [v for v, _ in pairs]
        feats = [manifest.load_video_features(v, clamp_timestamps=self.cfg.clamp_timestamps)
                 for v in video_ids]
        prepared = self.video.prepare(feats, video_ids)
        psi = self.video.forward(prepared, train=train, rng=rng)
        if self.cfg.caption_source == "vectors":
            vecs = np.stack([manifest.load_caption_vector(c.caption_id)
                             for _, c in pairs])
            phi, w = self.caption.forward_pooled(self.caption.pool_vectors(vecs))
        else:
            ids = [self.caption_token_ids(c, manifest.vocabulary) for _, c in pairs]
            phi, w = self.caption.forward_tokens(ids, train=train, rng=rng)
        return psi, prepared.presence, phi, w
