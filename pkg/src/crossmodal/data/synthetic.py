"""Synthetic retrieval benchmark built from latent event sequences.

Each video is a short sequence of latent events placed in distinct
one-second slots. Every event deterministically emits one feature row per
expert (a fixed random projection of the event's latent vector), and the
caption lists the event words in temporal order, so the caption-video
mapping is exactly recoverable from the data.

Order-contrastive twins share the same pair of events and the same pair
of timestamps with the assignment swapped; their captions differ only in
the order word ("before" vs "after"). Twins are only separable through
temporal information on the video side.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from .featio import write_expert_features
from .manifest import CANONICAL_EXPERTS, load_manifest, save_manifest
from .tokenizer import Vocabulary

ORDER_WORDS = ("before", "after")


@dataclass(frozen=True)
class SyntheticSpec:
    """Size and shape of a generated dataset. Counts are videos per split."""

    n_train: int = 32
    n_val: int = 8
    n_test: int = 8
    contrastive_fraction: float = 0.0
    n_experts: int = 3
    n_events: int = 12
    event_dim: int = 4
    events_per_video: tuple[int, int] = (2, 3)
    t_max: float = 8.0
    missing_rate: float = 0.0

    def __post_init__(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.total == 0:
            raise ConfigError("split sizes must be non-negative and not all zero")
        if not 0.0 <= self.contrastive_fraction <= 1.0:
            raise ConfigError("contrastive_fraction must lie in [0, 1]")
        if not 1 <= self.n_experts <= len(CANONICAL_EXPERTS):
            raise ConfigError(f"n_experts must lie in [1, {len(CANONICAL_EXPERTS)}]")
        if self.n_events < 2:
            raise ConfigError("need at least two distinct events")
        if self.event_dim < 1:
            raise ConfigError("event_dim must be >= 1")
        lo, hi = self.events_per_video
        if not 1 <= lo <= hi:
            raise ConfigError("events_per_video must be an increasing range from >= 1")
        if hi > self.num_slots:
            raise ConfigError("events_per_video exceeds the number of time slots")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")

    @property
    def total(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def num_slots(self) -> int:
        return int(np.ceil(self.t_max - 0.5))

    @property
    def expert_names(self) -> tuple[str, ...]:
        return CANONICAL_EXPERTS[: self.n_experts]

    @property
    def native_dims(self) -> tuple[int, ...]:
        return tuple(5 + i for i in range(self.n_experts))

    def event_word(self, idx: int) -> str:
        return f"ev{idx:03d}"


def _slot_times(spec: SyntheticSpec) -> np.ndarray:
    return np.arange(spec.num_slots, dtype=np.float64) + 0.5


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path, seed: int):
    """Write a synthetic dataset under out_dir; returns the loaded manifest.

    The same (spec, seed) always produces byte-identical files.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(entropy=(int(seed), 0x5EED))
    latent_rng, video_rng = (np.random.default_rng(c) for c in ss.spawn(2))

    latents = latent_rng.normal(0.0, 1.0, size=(spec.n_events, spec.event_dim))
    projections = {
        name: latent_rng.normal(0.0, 1.0, size=(spec.event_dim, dim))
        for name, dim in zip(spec.expert_names, spec.native_dims)
    }
    slots = _slot_times(spec)

    videos: list[dict] = []
    captions: list[dict] = []
    video_events: dict[str, list[list[float]]] = {}
    contrastive_pairs: list[list[str]] = []
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    seen: set[tuple] = set()
    counter = 0

    def next_id() -> str:
        nonlocal counter
        vid = f"v{counter:05d}"
        counter += 1
        return vid

    def emit_video(vid: str, events: list[int], times: list[float], caption: str) -> None:
        order = np.argsort(times, kind="stable")
        ts = np.asarray(times, dtype=np.float64)[order]
        evs = [events[i] for i in order]
        paths: dict[str, str | None] = {}
        present = [video_rng.random() >= spec.missing_rate for _ in spec.expert_names]
        if not any(present):
            present[int(video_rng.integers(len(present)))] = True
        for keep, name in zip(present, spec.expert_names):
            if not keep:
                paths[name] = None
                continue
            rows = latents[evs] @ projections[name]
            rel = f"features/{vid}_{name}.mmtf"
            write_expert_features(out_dir / rel, ts, rows)
            paths[name] = rel
        videos.append({"video_id": vid, "duration": spec.t_max, "features": paths})
        captions.append({"caption_id": f"c{vid[1:]}", "video_id": vid, "text": caption})
        video_events[vid] = [[int(e), float(t)] for e, t in zip(evs, ts)]

    # Time-ordered event sequences are claimed per split, so every caption
    # resolves to exactly one video within the split retrieval ranks over.
    # Twin event pairs may therefore recur across splits with fresh
    # timestamps, which is what makes held-out order discrimination a test
    # of temporal encoding rather than of memorizing event pairs.
    def sample_normal(split: str) -> None:
        for _ in range(10000):
            k = int(video_rng.integers(spec.events_per_video[0], spec.events_per_video[1] + 1))
            events = video_rng.choice(spec.n_events, size=k, replace=False)
            times = video_rng.choice(slots, size=k, replace=False)
            order = np.argsort(times, kind="stable")
            key = (split,) + tuple(int(events[i]) for i in order)
            if key in seen:
                continue
            seen.add(key)
            caption = " ".join(spec.event_word(e) for e in key[1:])
            emit_video(next_id(), list(map(int, events)), list(map(float, times)), caption)
            return
        raise DataError("could not sample a fresh video; increase n_events or t_max")

    def sample_twins(split: str) -> None:
        for _ in range(10000):
            a, b = sorted(map(int, video_rng.choice(spec.n_events, size=2, replace=False)))
            t1, t2 = sorted(map(float, video_rng.choice(slots, size=2, replace=False)))
            if (split, a, b) in seen or (split, b, a) in seen:
                continue
            seen.add((split, a, b))
            seen.add((split, b, a))
            wa, wb = spec.event_word(a), spec.event_word(b)
            vid_x, vid_y = next_id(), next_id()
            emit_video(vid_x, [a, b], [t1, t2], f"{wa} before {wb}")
            emit_video(vid_y, [a, b], [t2, t1], f"{wa} after {wb}")
            contrastive_pairs.append([vid_x, vid_y])
            return
        raise DataError("could not sample a fresh twin pair; increase n_events or t_max")

    for split, count in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        start = counter
        n_twin_videos = int(count * spec.contrastive_fraction) // 2 * 2
        for _ in range(n_twin_videos // 2):
            sample_twins(split)
        for _ in range(count - n_twin_videos):
            sample_normal(split)
        splits[split] = [f"v{i:05d}" for i in range(start, counter)]

    train_texts = [c["text"] for c in captions if c["video_id"] in set(splits["train"])]
    vocabulary = Vocabulary.from_captions(train_texts) if train_texts else Vocabulary([])

    payload = {
        "format_version": 1,
        "t_max": spec.t_max,
        "max_features_per_expert": spec.events_per_video[1],
        "experts": [
            {"name": name, "native_dim": dim, "temporal": True}
            for name, dim in zip(spec.expert_names, spec.native_dims)
        ],
        "videos": videos,
        "captions": captions,
        "splits": splits,
        "vocabulary": vocabulary.words,
        "synthetic": {
            "spec": {
                "n_train": spec.n_train,
                "n_val": spec.n_val,
                "n_test": spec.n_test,
                "contrastive_fraction": spec.contrastive_fraction,
                "n_events": spec.n_events,
                "event_dim": spec.event_dim,
                "seed": int(seed),
            },
            "event_words": [spec.event_word(i) for i in range(spec.n_events)],
            "event_latents": latents.tolist(),
            "projections": {k: v.tolist() for k, v in projections.items()},
            "video_events": video_events,
            "contrastive_pairs": contrastive_pairs,
        },
    }
    manifest_path = out_dir / "manifest.json"
    save_manifest(payload, manifest_path)
    return load_manifest(manifest_path)
