"""Minimal reverse-mode tensor library and the RISurConv layer set."""

from .functional import (
    batchnorm,
    concat,
    cross_entropy,
    gather,
    layernorm,
    linear,
    maxpool,
    multi_head_attention,
    relu,
    self_attention,
    softmax,
)
from .layers import (
    BatchNorm,
    Linear,
    Module,
    RISurConv,
    SelfAttention,
    SharedMLP,
    TransformerEncoder,
    risurconv_forward,
    transformer_encoder,
)
from .optim import Adam
from .tensor import GraphError, Tensor, backward, matmul, tensor

__all__ = [
    "Adam", "BatchNorm", "GraphError", "Linear", "Module", "RISurConv", "SelfAttention",
    "SharedMLP", "Tensor", "TransformerEncoder", "backward", "batchnorm", "concat",
    "cross_entropy", "gather", "layernorm", "linear", "matmul", "maxpool",
    "multi_head_attention", "relu", "risurconv_forward", "self_attention", "softmax",
    "tensor", "transformer_encoder",
]
