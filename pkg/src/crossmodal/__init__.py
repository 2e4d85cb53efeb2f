"""Cross-modal video-text retrieval: expert-feature fusion with a
transformer video encoder, gated caption embeddings, and a bidirectional
max-margin ranking objective."""

import os as _os

# BLAS libraries read their thread caps at import time, so this must run
# before numpy loads anywhere in the package.
_threads = _os.environ.get("CROSSMODAL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .config import (  # noqa: E402
    ModelConfig,
    TrainConfig,
    apply_ablations,
    architecture_fingerprint,
    config_from_json,
    config_to_json,
    tiny_model_config,
    tiny_train_config,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    CrossmodalError,
    DataError,
    DimensionError,
    FeatureFormatError,
    ManifestError,
    NumericsError,
)
from .evaluation import (
    aggregate_seeds,
    evaluate_matrix,
    evaluate_split,
    geometric_mean_recall,
    metrics_from_ranks,
    order_discrimination,
    ranks_from_matrix,
)
from .matching import (
    RepresentationStore,
    load_store,
    rank_store_videos,
    ranking_loss,
    save_store,
    score_matrix,
    similarity,
)
from .model import RetrievalModel
from .training import (
    Checkpoint,
    TrainResult,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "CrossmodalError",
    "DataError",
    "DimensionError",
    "FeatureFormatError",
    "ManifestError",
    "ModelConfig",
    "NumericsError",
    "RepresentationStore",
    "RetrievalModel",
    "TrainConfig",
    "TrainResult",
    "aggregate_seeds",
    "apply_ablations",
    "architecture_fingerprint",
    "config_from_json",
    "config_to_json",
    "evaluate_matrix",
    "evaluate_split",
    "geometric_mean_recall",
    "load_checkpoint",
    "load_store",
    "lr_at",
    "metrics_from_ranks",
    "order_discrimination",
    "rank_store_videos",
    "ranking_loss",
    "ranks_from_matrix",
    "save_checkpoint",
    "save_store",
    "score_matrix",
    "similarity",
    "tiny_model_config",
    "tiny_train_config",
    "train",
]
