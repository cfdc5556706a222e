"""Minimal dense numeric substrate: float64 tensors, reverse-mode autodiff, attention."""
from .attention import (NEG_INF, attention, attention_mix, attention_scores, causal_mask,
                        key_padding_mask, masked_softmax)
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention
from .optim import AdamW, clip_grad_norm, cosine_lr
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = list(_tensor_all) + [
    "NEG_INF", "attention", "attention_mix", "attention_scores", "causal_mask",
    "key_padding_mask", "masked_softmax", "MLP", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "AdamW", "clip_grad_norm", "cosine_lr",
]
