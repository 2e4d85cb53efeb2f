from .tensor import (
    Parameter,
    Tensor,
    concat,
    dropout,
    is_grad_enabled,
    l2_normalize,
    masked_max,
    masked_softmax,
    no_grad,
    set_finite_checks,
    softmax,
    stack,
)
from .nn import (
    AttentionConfig,
    Embedding,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    TransformerEncoder,
    normal_init,
)
from .adam import Adam, adam_step

__all__ = [
    "Adam",
    "AttentionConfig",
    "Embedding",
    "EncoderLayer",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "MultiHeadSelfAttention",
    "Parameter",
    "Tensor",
    "TransformerEncoder",
    "adam_step",
    "concat",
    "dropout",
    "is_grad_enabled",
    "l2_normalize",
    "masked_max",
    "masked_softmax",
    "no_grad",
    "normal_init",
    "set_finite_checks",
    "softmax",
    "stack",
]
