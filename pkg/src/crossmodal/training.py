"""Deterministic mini-batch training with stepped lr decay and checkpoints.

All randomness is counter-based: the epoch permutation depends only on
(seed, epoch) and the per-step dropout stream only on (seed, step), so a
resumed run consumes exactly the batches and masks the uninterrupted run
would have.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Adam
from .config import TrainConfig, architecture_fingerprint, config_from_dict, config_to_dict
from .data.manifest import CaptionRecord, DatasetManifest, ExpertSpec
from .data.tokenizer import Vocabulary
from .errors import CheckpointError, ConfigError
from .evaluation import evaluate_split, geometric_mean_recall
from .matching import ranking_loss, score_matrix
from .model import RetrievalModel

CHECKPOINT_MAGIC = b"MMCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQ")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Stepped decay: initial_lr * decay^floor(step / decay_every)."""
    if step < 0:
        raise ConfigError("step must be nonnegative")
    return cfg.initial_lr * cfg.lr_decay ** (step // cfg.lr_decay_every)


def batch_indices(pool_size: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Without-replacement batch for one step of an epoch-shuffled stream.

    Epochs are permutations of the pool; the short tail of each epoch is
    dropped so every batch is full.
    """
    steps_per_epoch = pool_size // batch_size
    if steps_per_epoch < 1:
        raise ConfigError(
            f"dataset of {pool_size} pairs is smaller than batch size {batch_size}")
    epoch, within = divmod(step, steps_per_epoch)
    perm = np.random.default_rng(
        np.random.SeedSequence(entropy=(seed, 0xE9, epoch))).permutation(pool_size)
    lo = within * batch_size
    return perm[lo:lo + batch_size]


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xD0, step)))


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class TrainResult:
    model: RetrievalModel
    optimizer: Adam
    trace: list[dict]
    val_trace: list[dict]

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["loss"]


def train_step(model: RetrievalModel, manifest: DatasetManifest,
               pairs: list[tuple[CaptionRecord, str]], cfg: TrainConfig,
               optimizer: Adam, step: int) -> float:
    idx = batch_indices(len(pairs), cfg.batch_size, cfg.seed, step)
    batch = [(pairs[i][1], pairs[i][0]) for i in idx]
    rng = step_rng(cfg.seed, step)
    psi, presence, phi, w = model.encode_pair_batch(manifest, batch, train=True, rng=rng)
    scores = score_matrix(psi, presence, phi, w,
                          normalize_video=cfg.model.normalize_video,
                          renormalize_missing=cfg.model.encoder == "none")
    loss = ranking_loss(scores, cfg.margin)
    optimizer.zero_grad()
    loss.backward()
    if cfg.grad_clip is not None:
        clip_gradients(model.parameters(), cfg.grad_clip)
    skip = (frozenset(p.name for p in model.caption.parameters())
            if cfg.freeze_caption_encoder else frozenset())
    optimizer.step(lr_at(step, cfg), skip=skip)
    return float(loss.data)


def train(manifest: DatasetManifest, cfg: TrainConfig,
          model: RetrievalModel | None = None, optimizer: Adam | None = None,
          start_step: int = 0, log=None) -> TrainResult:
    """Run (or resume) the training loop; the trace records every step."""
    pairs = [(c, v.video_id) for c, v in manifest.all_pairs("train")]
    if len(pairs) < cfg.batch_size:
        raise ConfigError(
            f"train split has {len(pairs)} pairs, fewer than batch size {cfg.batch_size}")
    if model is None:
        model = RetrievalModel.from_manifest(cfg.model, manifest, seed=cfg.seed)
    if optimizer is None:
        optimizer = Adam(model.parameters())
    trace: list[dict] = []
    val_trace: list[dict] = []
    for step in range(start_step, cfg.total_steps):
        loss = train_step(model, manifest, pairs, cfg, optimizer, step)
        trace.append({"step": step, "loss": loss, "lr": lr_at(step, cfg)})
        if log is not None and (step % cfg.log_every == 0 or step == cfg.total_steps - 1):
            log(f"step {step:>6d}  loss {loss:.6f}  lr {lr_at(step, cfg):.3e}")
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            report = evaluate_split(model, manifest, "val")
            val_trace.append({"step": step + 1,
                              "gmr": geometric_mean_recall(report),
                              "metrics": report})
    return TrainResult(model, optimizer, trace, val_trace)


# ---------------------------------------------------------------------------
# checkpoint container: fixed header, JSON metadata, raw float64 payload


@dataclass
class Checkpoint:
    model: RetrievalModel
    optimizer: Adam
    cfg: TrainConfig
    step: int
    vocabulary: Vocabulary | None
    fingerprint: str


def save_checkpoint(path: str | Path, model: RetrievalModel, optimizer: Adam,
                    step: int, cfg: TrainConfig,
                    vocabulary: Vocabulary | None = None) -> None:
    """Write parameters + optimizer state; bit-exact on reload.

    A `<path>.config.json` sidecar echoes the configuration for audits.
    Embedding the vocabulary lets retrieval tokenize queries from the
    checkpoint alone.
    """
    path = Path(path)
    named = [(f"param.{p.name}", p.data) for p in model.parameters()]
    named.extend(sorted(optimizer.state_arrays().items()))
    entries = []
    offset = 0
    flat_parts = []
    for name, arr in named:
        a = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        flat_parts.append(a.reshape(-1))
    header = {
        "format_version": CHECKPOINT_VERSION,
        "fingerprint": model.fingerprint(),
        "step": int(step),
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "experts": [[e.name, e.native_dim, e.temporal] for e in model.experts],
        "vocab_size": model.vocab_size,
        "t_max": model.t_max,
        "vocabulary": None if vocabulary is None else vocabulary.words,
        "arrays": entries,
        "total_values": offset,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        if flat_parts:
            fh.write(np.concatenate(flat_parts).tobytes())
    Path(str(path) + ".config.json").write_text(
        json.dumps(config_to_dict(cfg), indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path,
                    manifest: DatasetManifest | None = None) -> Checkpoint:
    """Rebuild model + optimizer from a container file.

    With a manifest, the checkpoint's architecture fingerprint must match
    the one derived from that manifest and config.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _CKPT_HEADER.size:
        raise CheckpointError(f"checkpoint {path} is truncated")
    magic, version, hlen = _CKPT_HEADER.unpack(raw[:_CKPT_HEADER.size])
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body = raw[_CKPT_HEADER.size:]
    if len(body) < hlen:
        raise CheckpointError(f"checkpoint {path} is truncated")
    try:
        header = json.loads(body[:hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from exc

    cfg = config_from_dict(header["config"])
    experts = [ExpertSpec(str(n), int(d), bool(t)) for n, d, t in header["experts"]]
    specs = [(e.name, e.native_dim, e.temporal) for e in experts]
    expected = architecture_fingerprint(cfg.model, specs, header["vocab_size"],
                                        header["t_max"])
    if expected != header["fingerprint"]:
        raise CheckpointError("checkpoint fingerprint does not match its own config")

    payload = body[hlen:]
    total = header["total_values"]
    if len(payload) != total * 8:
        raise CheckpointError(
            f"checkpoint payload holds {len(payload)} bytes, expected {total * 8}")
    flat = np.frombuffer(payload, dtype="<f8")

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        lo = entry["offset"]
        arrays[entry["name"]] = flat[lo:lo + size].reshape(shape).copy()

    model = RetrievalModel(cfg.model, experts, header["vocab_size"], header["t_max"],
                           seed=cfg.seed)
    if manifest is not None:
        mspecs = [(e.name, e.native_dim, e.temporal) for e in manifest.experts]
        derived = architecture_fingerprint(cfg.model, mspecs,
                                           len(manifest.vocabulary), manifest.t_max)
        if derived != header["fingerprint"]:
            raise CheckpointError(
                "checkpoint was trained against a different architecture/dataset "
                f"(fingerprint {header['fingerprint']} vs {derived})")
    for p in model.parameters():
        key = f"param.{p.name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {p.name}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(f"checkpoint parameter {p.name} has shape "
                                  f"{arrays[key].shape}, expected {p.data.shape}")
        p.data = arrays[key]
    optimizer = Adam(model.parameters())
    try:
        optimizer.load_state_arrays(arrays, header["step"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing optimizer state {exc}") from exc

    vocab_words = header.get("vocabulary")
    vocabulary = Vocabulary(vocab_words) if vocab_words is not None else None
    return Checkpoint(model, optimizer, cfg, int(header["step"]), vocabulary,
                      header["fingerprint"])
