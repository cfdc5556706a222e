"""Parameter containers built on the tensor primitives."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .attention import attention
from .tensor import Tensor, layer_norm, linear, tanh


class Module:
    """Base class that discovers parameters from attributes.

    Attributes holding a :class:`Tensor`, a :class:`Module` or a list of
    modules are walked in insertion order, giving stable dotted names such as
    ``layers.0.mode_attn.wq``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, sub in enumerate(val):
                    yield from sub.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters() if v.requires_grad}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()


def param(rng: np.random.Generator, shape, fan_in: int | None = None) -> Tensor:
    fan_in = fan_in or shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = param(rng, (d_in, d_out))
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = zeros((dim,))
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Two affine maps with a tanh in between."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out)

    def __call__(self, x):
        return self.fc2(tanh(self.fc1(x)))


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        for name in ("q", "k", "v", "o"):
            setattr(self, "w" + name, param(rng, (dim, dim)))
            setattr(self, "b" + name, zeros((dim,)))

    def weights(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}

    def __call__(self, query, key, value=None, mask=None, return_weights: bool = False):
        value = key if value is None else value
        return attention(query, key, value, self.weights(), self.heads, mask=mask,
                         return_weights=return_weights)
