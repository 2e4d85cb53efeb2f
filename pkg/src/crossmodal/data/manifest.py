"""Dataset manifest: experts, videos, captions, splits, vocabulary.

The manifest is a single JSON file; feature files live next to it and are
referenced by relative path. Loading validates structure and file
existence eagerly so downstream code can assume a consistent dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ManifestError
from .featio import read_expert_features
from .tokenizer import Vocabulary, tokenize

MANIFEST_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")

# Expert identities used by the reference feature set; manifests may name
# any subset or other experts as long as dims are consistent.
CANONICAL_EXPERTS = ("motion", "audio", "scene", "ocr", "face", "speech", "appearance")


@dataclass(frozen=True)
class ExpertSpec:
    name: str
    native_dim: int
    temporal: bool = True


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    duration: float
    feature_paths: dict[str, str | None]


@dataclass(frozen=True)
class CaptionRecord:
    caption_id: str
    video_id: str
    text: str
    vector_path: str | None = None


@dataclass(frozen=True)
class ExpertFeatures:
    """Features of one expert for one video, already truncated to the cap."""

    timestamps: np.ndarray
    features: np.ndarray

    @property
    def count(self) -> int:
        return int(self.timestamps.shape[0])


@dataclass
class DatasetManifest:
    root: Path
    t_max: float
    max_features_per_expert: int
    experts: list[ExpertSpec]
    videos: dict[str, VideoRecord]
    captions: list[CaptionRecord]
    splits: dict[str, list[str]]
    vocabulary: Vocabulary
    synthetic: dict | None = None
    _captions_by_video: dict[str, list[CaptionRecord]] = field(init=False, repr=False)
    _captions_by_id: dict[str, CaptionRecord] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._captions_by_video = {}
        self._captions_by_id = {}
        for cap in self.captions:
            self._captions_by_video.setdefault(cap.video_id, []).append(cap)
            self._captions_by_id[cap.caption_id] = cap

    @property
    def expert_names(self) -> list[str]:
        return [e.name for e in self.experts]

    def captions_for(self, video_id: str) -> list[CaptionRecord]:
        return self._captions_by_video.get(video_id, [])

    def caption(self, caption_id: str) -> CaptionRecord:
        rec = self._captions_by_id.get(caption_id)
        if rec is None:
            raise ManifestError(f"unknown caption id {caption_id!r}")
        return rec

    def load_caption_vector(self, caption_id: str) -> np.ndarray:
        """Read a caption's precomputed vector (shape [d])."""
        rec = self.caption(caption_id)
        if rec.vector_path is None:
            raise ManifestError(f"caption {caption_id!r} has no precomputed vector")
        ts, rows = read_expert_features(self.root / rec.vector_path)
        if rows.shape[0] != 1:
            raise ManifestError(
                f"caption vector file for {caption_id!r} must hold exactly one row")
        return rows[0]

    def split_videos(self, split: str) -> list[VideoRecord]:
        if split not in self.splits:
            raise ManifestError(f"unknown split {split!r}")
        return [self.videos[vid] for vid in self.splits[split]]

    def aligned_pairs(self, split: str) -> list[tuple[CaptionRecord, VideoRecord]]:
        """One (caption, video) pair per split video, in split order."""
        return [(self.captions_for(v.video_id)[0], v) for v in self.split_videos(split)]

    def all_pairs(self, split: str) -> list[tuple[CaptionRecord, VideoRecord]]:
        """Every (caption, video) pair for videos in a split."""
        out = []
        for v in self.split_videos(split):
            for cap in self.captions_for(v.video_id):
                out.append((cap, v))
        return out

    def load_video_features(self, video_id: str,
                            clamp_timestamps: bool = False) -> dict[str, ExpertFeatures | None]:
        """Read a video's expert features; missing experts map to None.

        Timestamps at or past t_max are rejected unless clamping is on.
        When an expert provides more than max_features_per_expert rows,
        the earliest rows are kept.
        """
        video = self.videos.get(video_id)
        if video is None:
            raise ManifestError(f"unknown video id {video_id!r}")
        out: dict[str, ExpertFeatures | None] = {}
        for spec in self.experts:
            rel = video.feature_paths.get(spec.name)
            if rel is None:
                out[spec.name] = None
                continue
            ts, feats = read_expert_features(self.root / rel)
            if feats.shape[1] != spec.native_dim:
                raise ManifestError(
                    f"{video_id}/{spec.name}: feature dim {feats.shape[1]} does not "
                    f"match expert native_dim {spec.native_dim}"
                )
            if ts.size and ts.min() < 0.0:
                raise ManifestError(f"{video_id}/{spec.name}: negative timestamp")
            if ts.size and ts.max() >= video.duration:
                raise ManifestError(
                    f"{video_id}/{spec.name}: timestamp {ts.max()} is not below "
                    f"video duration {video.duration}"
                )
            if not clamp_timestamps and ts.size and ts.max() >= self.t_max:
                raise ManifestError(
                    f"{video_id}/{spec.name}: timestamp {ts.max()} >= t_max "
                    f"{self.t_max}; pass clamp_timestamps to keep it"
                )
            cap = self.max_features_per_expert
            if ts.shape[0] > cap:
                ts, feats = ts[:cap], feats[:cap]
            out[spec.name] = ExpertFeatures(ts, feats)
        return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ManifestError(message)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc

    _require(isinstance(raw, dict), "manifest must be a JSON object")
    _require(raw.get("format_version") == MANIFEST_VERSION,
             f"unsupported manifest format_version {raw.get('format_version')!r}")

    t_max = raw.get("t_max")
    _require(isinstance(t_max, (int, float)) and t_max > 0, "t_max must be positive")
    cap = raw.get("max_features_per_expert")
    _require(isinstance(cap, int) and cap >= 1, "max_features_per_expert must be >= 1")

    experts_raw = raw.get("experts")
    _require(isinstance(experts_raw, list) and experts_raw, "experts must be a non-empty list")
    experts = []
    for e in experts_raw:
        _require(isinstance(e.get("name"), str) and e["name"], "expert name must be a string")
        _require(isinstance(e.get("native_dim"), int) and e["native_dim"] >= 1,
                 f"expert {e.get('name')}: native_dim must be >= 1")
        experts.append(ExpertSpec(e["name"], e["native_dim"], bool(e.get("temporal", True))))
    names = [e.name for e in experts]
    _require(len(set(names)) == len(names), "duplicate expert names")

    videos_raw = raw.get("videos")
    _require(isinstance(videos_raw, list) and videos_raw, "videos must be a non-empty list")
    videos: dict[str, VideoRecord] = {}
    for v in videos_raw:
        vid = v.get("video_id")
        _require(isinstance(vid, str) and vid, "video_id must be a string")
        _require(vid not in videos, f"duplicate video_id {vid!r}")
        duration = v.get("duration")
        _require(isinstance(duration, (int, float)) and duration > 0,
                 f"{vid}: duration must be positive")
        paths_raw = v.get("features", {})
        _require(isinstance(paths_raw, dict), f"{vid}: features must be an object")
        unknown = set(paths_raw) - set(names)
        _require(not unknown, f"{vid}: features reference unknown experts {sorted(unknown)}")
        paths: dict[str, str | None] = {}
        for name in names:
            rel = paths_raw.get(name)
            if rel is None:
                paths[name] = None
            else:
                _require(isinstance(rel, str), f"{vid}/{name}: path must be a string")
                _require((path.parent / rel).is_file(),
                         f"{vid}/{name}: feature file not found: {rel}")
                paths[name] = rel
        _require(any(p is not None for p in paths.values()),
                 f"{vid}: needs at least one present expert")
        videos[vid] = VideoRecord(vid, float(duration), paths)

    captions_raw = raw.get("captions")
    _require(isinstance(captions_raw, list) and captions_raw,
             "captions must be a non-empty list")
    captions = []
    seen_caps: set[str] = set()
    for c in captions_raw:
        cid = c.get("caption_id")
        _require(isinstance(cid, str) and cid, "caption_id must be a string")
        _require(cid not in seen_caps, f"duplicate caption_id {cid!r}")
        seen_caps.add(cid)
        _require(c.get("video_id") in videos,
                 f"caption {cid}: unknown video_id {c.get('video_id')!r}")
        _require(isinstance(c.get("text"), str) and c["text"].strip(),
                 f"caption {cid}: text must be a non-empty string")
        vec = c.get("vector")
        if vec is not None:
            _require(isinstance(vec, str), f"caption {cid}: vector must be a path string")
            _require((path.parent / vec).is_file(),
                     f"caption {cid}: vector file not found: {vec}")
        captions.append(CaptionRecord(cid, c["video_id"], c["text"], vec))

    splits_raw = raw.get("splits")
    _require(isinstance(splits_raw, dict), "splits must be an object")
    _require(set(splits_raw) == set(SPLIT_NAMES),
             f"splits must define exactly {SPLIT_NAMES}")
    splits: dict[str, list[str]] = {}
    claimed: set[str] = set()
    captioned = {c.video_id for c in captions}
    for split in SPLIT_NAMES:
        ids = splits_raw[split]
        _require(isinstance(ids, list), f"split {split} must be a list")
        for vid in ids:
            _require(vid in videos, f"split {split}: unknown video_id {vid!r}")
            _require(vid not in claimed, f"video {vid!r} appears in multiple splits")
            _require(vid in captioned, f"split {split}: video {vid!r} has no caption")
            claimed.add(vid)
        splits[split] = list(ids)

    vocab_raw = raw.get("vocabulary")
    if vocab_raw is None:
        train_texts = []
        for vid in splits["train"]:
            train_texts.extend(c.text for c in captions if c.video_id == vid)
        _require(bool(train_texts), "cannot build vocabulary: train split has no captions")
        vocabulary = Vocabulary.from_captions(train_texts)
    else:
        _require(isinstance(vocab_raw, list) and all(isinstance(w, str) for w in vocab_raw),
                 "vocabulary must be a list of strings")
        vocabulary = Vocabulary(list(vocab_raw))

    synthetic = raw.get("synthetic")
    _require(synthetic is None or isinstance(synthetic, dict),
             "synthetic metadata must be an object")

    return DatasetManifest(
        root=path.parent,
        t_max=float(t_max),
        max_features_per_expert=cap,
        experts=experts,
        videos=videos,
        captions=captions,
        splits=splits,
        vocabulary=vocabulary,
        synthetic=synthetic,
    )


def save_manifest(payload: dict, path: str | Path) -> None:
    """Write a manifest JSON dict deterministically (sorted keys)."""
    path = Path(path)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def validate_manifest(manifest: DatasetManifest) -> dict:
    """Eagerly read every referenced file; return dataset statistics."""
    per_expert_present = {name: 0 for name in manifest.expert_names}
    per_expert_rows = {name: 0 for name in manifest.expert_names}
    for vid in manifest.videos:
        feats = manifest.load_video_features(vid)
        for name, ef in feats.items():
            if ef is not None:
                per_expert_present[name] += 1
                per_expert_rows[name] += ef.count
    vectors = 0
    for cap in manifest.captions:
        tokenize(cap.text)
        if cap.vector_path is not None:
            manifest.load_caption_vector(cap.caption_id)
            vectors += 1
    return {
        "videos": len(manifest.videos),
        "captions": len(manifest.captions),
        "caption_vectors": vectors,
        "experts": manifest.expert_names,
        "splits": {s: len(ids) for s, ids in manifest.splits.items()},
        "vocabulary_size": len(manifest.vocabulary),
        "per_expert_present": per_expert_present,
        "per_expert_rows": per_expert_rows,
        "t_max": manifest.t_max,
        "max_features_per_expert": manifest.max_features_per_expert,
    }
