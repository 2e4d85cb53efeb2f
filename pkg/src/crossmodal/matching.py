"""Similarity scoring, the bidirectional ranking loss, and offline stores.

Scoring is a weighted sum of per-expert dot products: the caption side
supplies unit-length queries phi and mixture weights w, the video side
supplies one embedding psi per expert. The whole matrix reduces to a
single [B_v, N*d] x [N*d, B_c] product, so scoring a thousand videos
against a thousand captions is one matmul.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, l2_normalize, no_grad
from .data.featio import DTYPE_F64, read_records, write_records
from .errors import ContractError, DataError, DimensionError

STORE_VERSION = 1
STORE_INDEX = "index.json"
STORE_VIDEOS = "videos.bin"
STORE_CAPTIONS = "captions.bin"


def score_matrix(psi: Tensor | np.ndarray, presence: np.ndarray | None,
                 phi: Tensor | np.ndarray, w: Tensor | np.ndarray,
                 normalize_video: bool = True,
                 renormalize_missing: bool = False) -> Tensor:
    """All-pairs scores: [B_v, N, d] x ([B_c, N, d], [B_c, N]) -> [B_v, B_c].

    With renormalize_missing, mixture weights are rescaled per pair over
    the experts present in the video (the no-fusion baseline's missing
    handling); otherwise absent experts simply contribute what the video
    encoder produced for them.
    """
    psi = Tensor._coerce(psi)
    phi = Tensor._coerce(phi)
    w = Tensor._coerce(w)
    if psi.data.ndim != 3 or phi.data.ndim != 3 or w.data.ndim != 2:
        raise DimensionError("score_matrix expects psi [Bv,N,d], phi [Bc,N,d], w [Bc,N]")
    bv, n, d = psi.shape
    bc = phi.shape[0]
    if phi.shape != (bc, n, d) or w.shape != (bc, n):
        raise DimensionError(
            f"expert count/dim mismatch: psi {psi.shape}, phi {phi.shape}, w {w.shape}")
    if normalize_video:
        psi = l2_normalize(psi, axis=-1)
    weighted = phi * w.reshape(bc, n, 1)
    scores = psi.reshape(bv, n * d).matmul(weighted.reshape(bc, n * d).swapaxes(0, 1))
    if renormalize_missing:
        if presence is None:
            raise ContractError("renormalize_missing requires a presence matrix")
        pres = np.asarray(presence, dtype=np.float64)
        if pres.shape != (bv, n):
            raise DimensionError(f"presence must be [Bv, N], got {pres.shape}")
        if not pres.any(axis=1).all():
            raise ContractError("a video has no present expert")
        denom = Tensor(pres).matmul(w.swapaxes(0, 1))
        scores = scores / denom
    return scores


def similarity(psi: np.ndarray, phi: np.ndarray, w: np.ndarray,
               presence: np.ndarray | None = None, normalize_video: bool = True,
               renormalize_missing: bool = False) -> float:
    """Score one (video, caption) pair from [N, d] / [N, d] / [N] blocks."""
    psi = np.asarray(psi, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if psi.ndim != 2 or phi.shape != psi.shape or w.shape != (psi.shape[0],):
        raise DimensionError(
            f"similarity expects matching [N, d] blocks, got {psi.shape} vs {phi.shape}")
    pres = None if presence is None else np.asarray(presence, dtype=bool)[None, :]
    with no_grad():
        out = score_matrix(psi[None], pres, phi[None], w[None],
                           normalize_video=normalize_video,
                           renormalize_missing=renormalize_missing)
    return float(out.data[0, 0])


def ranking_loss(scores: Tensor | np.ndarray, margin: float) -> Tensor:
    """Bidirectional max-margin loss over a square aligned score matrix.

    L = (1/B) sum_i sum_{j != i} [relu(s_ij - s_ii + m) + relu(s_ji - s_ii + m)].
    The hinge subgradient at exact equality is zero.
    """
    if margin < 0:
        raise ContractError("margin must be nonnegative")
    scores = Tensor._coerce(scores)
    if scores.data.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionError(f"ranking loss needs a square matrix, got {scores.shape}")
    b = scores.shape[0]
    if b < 2:
        raise DimensionError("ranking loss needs at least two pairs")
    eye = np.eye(b)
    diag = (scores * eye).sum(axis=1).reshape(b, 1)
    off = 1.0 - eye
    caption_to_video = ((scores - diag + margin).relu() * off).sum()
    video_to_caption = ((scores.swapaxes(0, 1) - diag + margin).relu() * off).sum()
    return (caption_to_video + video_to_caption) / b


# ---------------------------------------------------------------------------
# precomputed-representation store


@dataclass
class RepresentationStore:
    """In-memory view of an offline store; arrays are float64."""

    video_ids: list[str]
    psi: np.ndarray                 # [Bv, N, d]
    presence: np.ndarray            # [Bv, N] bool
    caption_ids: list[str] | None
    phi: np.ndarray | None          # [Bc, N, d]
    w: np.ndarray | None            # [Bc, N]
    meta: dict

    def score(self) -> np.ndarray:
        """Score every stored video against every stored caption."""
        if self.phi is None:
            raise DataError("store holds no caption representations")
        with no_grad():
            out = score_matrix(self.psi, self.presence, self.phi, self.w,
                               normalize_video=bool(self.meta["normalize_video"]),
                               renormalize_missing=bool(self.meta["renormalize_missing"]))
        return out.data


def save_store(out_dir: str | Path, video_ids: list[str], psi: np.ndarray,
               presence: np.ndarray, meta: dict,
               caption_ids: list[str] | None = None, phi: np.ndarray | None = None,
               w: np.ndarray | None = None) -> None:
    """Write representations as 64-bit record files plus a JSON index.

    videos.bin holds B_v * N rows of psi (record index as timestamp);
    captions.bin holds B_c * N rows of [phi_e | w_e], one expert per row.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    psi = np.asarray(psi, dtype=np.float64)
    bv, n, d = psi.shape
    if len(video_ids) != bv or presence.shape != (bv, n):
        raise DimensionError("video ids/presence do not match psi block")
    write_records(out_dir / STORE_VIDEOS, np.arange(bv * n, dtype=np.float64),
                  psi.reshape(bv * n, d), dtype_code=DTYPE_F64)
    index = {
        "format_version": STORE_VERSION,
        "d_model": d,
        "num_experts": n,
        "video_ids": list(video_ids),
        "presence": [[bool(x) for x in row] for row in presence],
        "caption_ids": None,
        "meta": meta,
    }
    if caption_ids is not None:
        phi = np.asarray(phi, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        bc = len(caption_ids)
        if phi.shape != (bc, n, d) or w.shape != (bc, n):
            raise DimensionError("caption ids do not match phi/w blocks")
        rows = np.concatenate([phi, w[:, :, None]], axis=2).reshape(bc * n, d + 1)
        write_records(out_dir / STORE_CAPTIONS, np.arange(bc * n, dtype=np.float64),
                      rows, dtype_code=DTYPE_F64)
        index["caption_ids"] = list(caption_ids)
    (out_dir / STORE_INDEX).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


def load_store(store_dir: str | Path) -> RepresentationStore:
    store_dir = Path(store_dir)
    index_path = store_dir / STORE_INDEX
    if not index_path.is_file():
        raise DataError(f"no store index at {index_path}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"store index is not valid JSON: {exc}") from exc
    if index.get("format_version") != STORE_VERSION:
        raise DataError(f"unsupported store version {index.get('format_version')!r}")
    d = index["d_model"]
    n = index["num_experts"]
    video_ids = index["video_ids"]
    _, rows = read_records(store_dir / STORE_VIDEOS)
    if rows.shape != (len(video_ids) * n, d):
        raise DataError("video block shape does not match the index")
    psi = rows.reshape(len(video_ids), n, d)
    presence = np.asarray(index["presence"], dtype=bool)
    if presence.shape != (len(video_ids), n):
        raise DataError("presence shape does not match the index")
    caption_ids = index.get("caption_ids")
    phi = w = None
    if caption_ids is not None:
        _, crows = read_records(store_dir / STORE_CAPTIONS)
        if crows.shape != (len(caption_ids) * n, d + 1):
            raise DataError("caption block shape does not match the index")
        crows = crows.reshape(len(caption_ids), n, d + 1)
        phi, w = crows[:, :, :d], crows[:, :, d]
    return RepresentationStore(video_ids, psi, presence, caption_ids, phi, w,
                               index.get("meta", {}))


def rank_store_videos(store: RepresentationStore, phi: np.ndarray, w: np.ndarray,
                      k: int) -> list[tuple[str, float]]:
    """Top-k stored videos for one caption query, best first, index tie-break."""
    if not store.video_ids:
        raise DataError("store holds no videos")
    if k < 1:
        raise ContractError("k must be >= 1")
    with no_grad():
        scores = score_matrix(
            store.psi, store.presence, phi[None], np.asarray(w, dtype=np.float64)[None],
            normalize_video=bool(store.meta["normalize_video"]),
            renormalize_missing=bool(store.meta["renormalize_missing"]),
        ).data[:, 0]
    order = np.argsort(-scores, kind="stable")[:k]
    return [(store.video_ids[i], float(scores[i])) for i in order]
