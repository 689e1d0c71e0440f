"""Minimal float64 autodiff, layers and AdamW."""

from . import tensor as ops
from .gradcheck import grad_check
from .nn import LayerNorm, Linear, Module, MultiHeadSelfAttention, TransformerEncoderLayer
from .optim import AdamW
from .tensor import ShapeError, Tensor, backward, tensor

__all__ = [
    "AdamW",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadSelfAttention",
    "ShapeError",
    "Tensor",
    "TransformerEncoderLayer",
    "backward",
    "grad_check",
    "ops",
    "tensor",
]
