"""Desk-scale scene encoder.

Agent histories are embedded per step and pooled over time by attention with
a learned query; map polylines are embedded per point and max-pooled. One
block of agent-to-map cross-attention and one of agent-to-agent
self-attention then mix the tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import AGENT_FEATURES, MAP_FEATURES, SceneBatch
from .numcore import (MLP, LayerNorm, Linear, Module, MultiHeadAttention, Tensor, concat,
                      key_padding_mask, max_pool, reshape, tanh)
from .numcore.nn import param


@dataclass
class SceneEmbedding:
    """Encoder output for a batch: agent and map tokens in a shared width."""

    agent_tokens: Tensor  # [B, A, D]
    map_tokens: Tensor  # [B, M, D]
    agent_mask: np.ndarray  # [B, A]
    map_mask: np.ndarray  # [B, M]
    target_rows: np.ndarray  # [B, A_t]

    @property
    def context(self) -> Tensor:
        return concat([self.agent_tokens, self.map_tokens], axis=1)

    @property
    def context_mask(self) -> np.ndarray:
        return np.concatenate([self.agent_mask, self.map_mask], axis=1)

    def target_tokens(self) -> Tensor:
        b = np.arange(self.target_rows.shape[0])[:, None]
        return self.agent_tokens[b, self.target_rows]

    def target_index_map(self, sample_targets, batch_index: int = 0) -> dict[int, int]:
        return {int(t): int(r) for t, r in zip(sample_targets, self.target_rows[batch_index])}


class AttentionBlock(Module):
    """Pre-norm residual attention followed by a pre-norm residual feed-forward."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.norm = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ff_norm = LayerNorm(dim)
        self.ff = MLP(rng, dim, 2 * dim, dim)

    def __call__(self, x, context, mask=None, normalize_context: bool = True):
        kv = self.norm(context) if normalize_context else context
        x = x + self.attn(self.norm(x), kv, mask=mask)
        return x + self.ff(self.ff_norm(x))


class SceneEncoder(Module):
    def __init__(self, rng: np.random.Generator, dim: int = 64, heads: int = 4, t_obs: int = 10):
        self.dim = dim
        self.t_obs = t_obs
        self.agent_in = Linear(rng, AGENT_FEATURES, dim)
        self.time_embed = param(rng, (t_obs, dim), fan_in=dim)
        self.pool_query = param(rng, (1, dim), fan_in=dim)
        self.time_pool = MultiHeadAttention(rng, dim, heads)
        self.map_in = Linear(rng, MAP_FEATURES, dim)
        self.map_out = Linear(rng, dim, dim)
        self.agent_map = AttentionBlock(rng, dim, heads)
        self.agent_agent = AttentionBlock(rng, dim, heads)
        self.out_norm = LayerNorm(dim)

    def __call__(self, batch: SceneBatch) -> SceneEmbedding:
        b, a, t, _ = batch.agent_feats.shape
        if a == 0:
            raise ValueError("encoder: empty agent list")
        if t != self.t_obs:
            raise ValueError(f"encoder: history length {t} != configured t_obs {self.t_obs}")
        steps = tanh(self.agent_in(Tensor(batch.agent_feats))) + self.time_embed
        agents = self.time_pool(self.pool_query, steps)  # [B, A, 1, D]
        agents = reshape(agents, (b, a, self.dim))

        points = tanh(self.map_in(Tensor(batch.map_feats)))
        polylines = max_pool(points, axis=2, mask=batch.point_mask[..., None])
        polylines = self.map_out(polylines)

        agents = self.agent_map(agents, polylines, mask=key_padding_mask(batch.map_mask))
        agents = self.agent_agent(agents, agents, mask=key_padding_mask(batch.agent_mask))
        return SceneEmbedding(self.out_norm(agents), self.out_norm(polylines),
                              batch.agent_mask, batch.map_mask, batch.target_rows)
