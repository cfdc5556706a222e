"""AdamW with a cosine learning-rate schedule and global-norm clipping."""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to ``min_lr`` at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    frac = min(max(step / total_steps, 0.0), 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * frac))


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> tuple[float, bool]:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.vdot(p.grad, p.grad))
    norm = math.sqrt(sq)
    clipped = max_norm > 0 and norm > max_norm
    if clipped:
        factor = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm, clipped


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies only to parameters with two or more axes (weight matrices,
    query banks); biases and normalisation gains are left alone.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.1):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"t": np.array(self.t)}
        for k in self.params:
            state[f"m.{k}"] = self.m[k]
            state[f"v.{k}"] = self.v[k]
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(np.asarray(state["t"]).reshape(-1)[0])
        for k in self.params:
            self.m[k] = np.array(state[f"m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"v.{k}"], dtype=np.float64)
