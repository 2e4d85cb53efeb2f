from .featio import (
    DTYPE_F32,
    DTYPE_F64,
    read_expert_features,
    read_records,
    write_expert_features,
    write_records,
)
from .manifest import (
    CANONICAL_EXPERTS,
    CaptionRecord,
    DatasetManifest,
    ExpertFeatures,
    ExpertSpec,
    VideoRecord,
    load_manifest,
    save_manifest,
    validate_manifest,
)
from .stopwords import STOP_WORDS, STOPWORDS_VERSION
from .synthetic import ORDER_WORDS, SyntheticSpec, generate_synthetic
from .tokenizer import PAD_ID, UNK_ID, Vocabulary, tokenize

__all__ = [
    "CANONICAL_EXPERTS",
    "CaptionRecord",
    "DatasetManifest",
    "DTYPE_F32",
    "DTYPE_F64",
    "ExpertFeatures",
    "ExpertSpec",
    "ORDER_WORDS",
    "PAD_ID",
    "STOP_WORDS",
    "STOPWORDS_VERSION",
    "SyntheticSpec",
    "UNK_ID",
    "VideoRecord",
    "Vocabulary",
    "generate_synthetic",
    "load_manifest",
    "read_expert_features",
    "read_records",
    "save_manifest",
    "tokenize",
    "validate_manifest",
    "write_expert_features",
    "write_records",
]
