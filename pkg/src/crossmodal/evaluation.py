"""Retrieval metrics, multi-seed aggregation, and benchmark evaluation.

Ranks use a deterministic pessimal-by-index tie rule: a query's true item
is outranked by every strictly better candidate and by every tied
candidate with a smaller index.
"""

from __future__ import annotations

import numpy as np

from .data.manifest import DatasetManifest
from .errors import ContractError, DimensionError
from .matching import score_matrix
from .model import RetrievalModel

RECALL_LEVELS = (1, 5, 10, 50)
DIRECTIONS = ("t2v", "v2t")


def ranks_from_matrix(scores: np.ndarray, direction: str) -> np.ndarray:
    """1-based rank of the aligned item for every query along one direction.

    rank_i = 1 + #{strictly better candidates} + #{tied candidates with
    smaller index}. t2v treats captions (columns) as queries ranking
    videos (rows); v2t is the transpose.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionError(f"aligned ranking needs a square matrix, got {scores.shape}")
    if direction not in DIRECTIONS:
        raise ContractError(f"direction must be one of {DIRECTIONS}")
    if direction == "v2t":
        scores = scores.T
    n = scores.shape[0]
    truth = np.diagonal(scores)                       # truth[j] for query column j
    greater = (scores > truth[None, :]).sum(axis=0)
    earlier = np.arange(n)[:, None] < np.arange(n)[None, :]
    ties_before = ((scores == truth[None, :]) & earlier).sum(axis=0)
    return (1 + greater + ties_before).astype(np.int64)


def metrics_from_ranks(ranks: np.ndarray) -> dict[str, float]:
    """R@{1,5,10,50} in percent plus median and mean rank."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DimensionError("empty rank vector")
    out = {f"R@{k}": float(100.0 * (ranks <= k).mean()) for k in RECALL_LEVELS}
    out["MdR"] = float(np.median(ranks))
    out["MnR"] = float(ranks.mean())
    return out


def evaluate_matrix(scores: np.ndarray) -> dict[str, dict[str, float]]:
    """Both-direction metrics for an aligned square score matrix."""
    return {d: metrics_from_ranks(ranks_from_matrix(scores, d)) for d in DIRECTIONS}


def geometric_mean_recall(report: dict[str, dict[str, float]]) -> float:
    """Scalar model-selection metric: gmean of R@1/R@5/R@10, averaged over
    both directions."""
    gms = []
    for d in DIRECTIONS:
        m = report[d]
        gms.append(float(np.cbrt(m["R@1"] * m["R@5"] * m["R@10"])))
    return float(np.mean(gms))


def aggregate_seeds(runs: list[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Per-metric mean and population std over >= 2 same-shaped runs."""
    if len(runs) < 2:
        raise ContractError("seed aggregation needs at least two runs")
    keys = list(runs[0])
    for r in runs[1:]:
        if list(r) != keys:
            raise ContractError("runs report different metrics; refusing to aggregate")
    return {
        k: {"mean": float(np.mean([r[k] for r in runs])),
            "std": float(np.std([r[k] for r in runs]))}
        for k in keys
    }


def order_discrimination(scores_true: np.ndarray, scores_twin: np.ndarray) -> float:
    """Fraction of queries scoring their own video above its swapped twin.

    Exact ties count one half, so indistinguishable twins sit at 0.5.
    """
    st = np.asarray(scores_true, dtype=np.float64)
    sw = np.asarray(scores_twin, dtype=np.float64)
    if st.shape != sw.shape or st.ndim != 1 or st.size == 0:
        raise DimensionError("order discrimination needs matching nonempty score vectors")
    return float(((st > sw) + 0.5 * (st == sw)).mean())


# ---------------------------------------------------------------------------
# model-level evaluation


def split_score_matrix(model: RetrievalModel, manifest: DatasetManifest, split: str,
                       temporal: str | None = None) -> tuple[np.ndarray, list[str], list[str]]:
    """Aligned score matrix for a split (one caption per video, split order)."""
    pairs = manifest.aligned_pairs(split)
    video_ids = [v.video_id for _, v in pairs]
    caps = [c for c, _ in pairs]
    psi, presence = model.video_representations(manifest, video_ids, temporal=temporal)
    phi, w = model.caption_representations(manifest, caps)
    scores = score_matrix(
        psi, presence, phi, w,
        normalize_video=model.cfg.normalize_video,
        renormalize_missing=model.cfg.encoder == "none",
    ).data
    return scores, video_ids, [c.caption_id for c in caps]


def evaluate_split(model: RetrievalModel, manifest: DatasetManifest, split: str,
                   temporal: str | None = None) -> dict[str, dict[str, float]]:
    scores, _, _ = split_score_matrix(model, manifest, split, temporal=temporal)
    return evaluate_matrix(scores)


def order_discrimination_eval(model: RetrievalModel, manifest: DatasetManifest,
                              split: str, temporal: str | None = None) -> float:
    """Order-discrimination accuracy over a split's contrastive twin pairs.

    Each twin's caption queries both videos of its pair; requires
    synthetic metadata listing the pairs.
    """
    if not manifest.synthetic or not manifest.synthetic.get("contrastive_pairs"):
        raise ContractError("manifest has no contrastive pairs to evaluate")
    in_split = set(manifest.splits[split])
    pairs = [tuple(p) for p in manifest.synthetic["contrastive_pairs"]
             if p[0] in in_split and p[1] in in_split]
    if not pairs:
        raise ContractError(f"split {split!r} has no contrastive pairs")
    video_ids: list[str] = []
    for a, b in pairs:
        video_ids.extend((a, b))
    caps = [manifest.captions_for(v)[0] for v in video_ids]
    psi, presence = model.video_representations(manifest, video_ids, temporal=temporal)
    phi, w = model.caption_representations(manifest, caps)
    scores = score_matrix(
        psi, presence, phi, w,
        normalize_video=model.cfg.normalize_video,
        renormalize_missing=model.cfg.encoder == "none",
    ).data
    idx = np.arange(len(video_ids))
    own = scores[idx, idx]
    twin = idx ^ 1  # pairs are interleaved (a0, b0, a1, b1, ...)
    other = scores[twin, idx]
    return order_discrimination(own, other)
