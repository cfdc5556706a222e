"""Mode-as-sequence decoders, prediction heads, rearrangement and joint extensions.

Mode embeddings are carried as ``[B, A_t, K, D]``: batch, target agent, mode
position, width. Single-agent decoding is the ``A_t = 1`` case.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoder import SceneEmbedding
from .features import POS_SCALE
from .numcore import (MLP, LayerNorm, Linear, Module, MultiHeadAttention, Tensor, causal_mask,
                      concat, key_padding_mask, max_pool, reshape, scale, sigmoid, softplus,
                      swapaxes)

SCALE_FLOOR = 1e-3


class ModeQueryBank(Module):
    """Learned per-position mode queries.

    The first ``n_trained`` rows are trainable. Rows up to ``max_modes`` are
    random and frozen; they are only consumed when decoding more modes than
    the model was trained with.
    """

    def __init__(self, rng: np.random.Generator, n_trained: int, max_modes: int, dim: int):
        self.n_trained = n_trained
        self.queries = Tensor(rng.normal(0.0, 1.0, size=(n_trained, dim)), requires_grad=True)
        self.extra = Tensor(rng.normal(0.0, 1.0, size=(max_modes - n_trained, dim)))

    @property
    def max_modes(self) -> int:
        return self.n_trained + self.extra.shape[0]

    def __call__(self, k: int) -> Tensor:
        if k < 1 or k > self.max_modes:
            raise ValueError(f"query bank holds 1..{self.max_modes} modes, asked for {k}")
        if k <= self.n_trained:
            return self.queries[:k]
        return concat([self.queries, self.extra[: k - self.n_trained]], axis=0)


class FutureInteraction(Module):
    """Self-attention across target agents inside each joint mode."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        self.norm = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)

    def __call__(self, x: Tensor) -> Tensor:
        # [B, A_t, K, D] -> attend over A_t separately for every k
        xt = swapaxes(x, -3, -2)
        h = self.norm(xt)
        return swapaxes(xt + self.attn(h, h), -3, -2)


class ModeSeqLayer(Module):
    """One decoding layer; the same weights serve the recurrent and parallel paths."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, joint: bool = False):
        self.mode_norm = LayerNorm(dim)
        self.mode_attn = MultiHeadAttention(rng, dim, heads)
        self.ctx_norm = LayerNorm(dim)
        self.ctx_attn = MultiHeadAttention(rng, dim, heads)
        self.interaction = FutureInteraction(rng, dim, heads) if joint else None
        self.ff_norm = LayerNorm(dim)
        self.ff = MLP(rng, dim, 2 * dim, dim)

    def _context_step(self, x: Tensor, ctx: Tensor, ctx_mask: np.ndarray) -> Tensor:
        x = x + self.ctx_attn(self.ctx_norm(x), ctx, mask=ctx_mask)
        if self.interaction is not None:
            x = self.interaction(x)
        return x + self.ff(self.ff_norm(x))

    def parallel(self, x: Tensor, emb: SceneEmbedding, causal: bool = True) -> Tensor:
        """All modes at once; mode k attends to modes <= k (or to all when ``causal`` is off)."""
        ctx, ctx_mask = _context(emb)
        h = self.mode_norm(x)
        mask = causal_mask(x.shape[-2]) if causal else None
        x = x + self.mode_attn(h, h, mask=mask)
        return self._context_step(x, ctx, ctx_mask)

    def recurrent(self, x: Tensor, emb: SceneEmbedding) -> Tensor:
        """Modes one at a time, each attending to the already decoded embeddings."""
        ctx, ctx_mask = _context(emb)
        outputs: list[Tensor] = []
        memory: list[Tensor] = []
        for k in range(x.shape[-2]):
            q = x[..., k:k + 1, :]
            if memory:
                mem = concat(memory, axis=-2) if len(memory) > 1 else memory[0]
                q = q + self.mode_attn(self.mode_norm(q), mem)
            m = self._context_step(q, ctx, ctx_mask)
            outputs.append(m)
            memory.append(self.mode_norm(m))
        return concat(outputs, axis=-2) if len(outputs) > 1 else outputs[0]

    def __call__(self, x: Tensor, emb: SceneEmbedding, variant: str = "parallel") -> Tensor:
        if variant == "parallel":
            return self.parallel(x, emb)
        if variant == "recurrent":
            return self.recurrent(x, emb)
        if variant == "set":
            return self.parallel(x, emb, causal=False)
        raise ValueError(f"unknown decoder variant {variant!r}")


def _context(emb: SceneEmbedding) -> tuple[Tensor, np.ndarray]:
    ctx = emb.context
    b, n, d = ctx.shape
    # broadcast over the target-agent axis: keys [B, 1, N, D], mask [B, 1, 1, N]
    return reshape(ctx, (b, 1, n, d)), key_padding_mask(emb.context_mask)[:, None]


class PredictionHead(Module):
    """Locations, Laplace scales and a confidence per mode embedding."""

    def __init__(self, rng: np.random.Generator, dim: int, t_hat: int, with_confidence: bool = True):
        self.t_hat = t_hat
        self.loc = MLP(rng, dim, dim, 2 * t_hat)
        self.scale = MLP(rng, dim, dim, 2 * t_hat)
        self.conf = MLP(rng, dim, dim, 1) if with_confidence else None

    def __call__(self, m: Tensor):
        lead = m.shape[:-1]
        loc = scale(reshape(self.loc(m), lead + (self.t_hat, 2)), POS_SCALE)
        sc = reshape(softplus(self.scale(m)), lead + (self.t_hat, 2)) + SCALE_FLOOR
        conf = None
        if self.conf is not None:
            conf = reshape(sigmoid(self.conf(m)), lead)
        return loc, sc, conf


class SceneScoreHead(Module):
    """Scene-level score of a joint mode from the agent-wise max of its embeddings."""

    def __init__(self, rng: np.random.Generator, dim: int):
        self.mlp = MLP(rng, dim, dim, 1)

    def pooled(self, m: Tensor) -> Tensor:
        return max_pool(m, axis=-3)  # [B, A_t, K, D] -> [B, K, D]

    def __call__(self, m: Tensor) -> Tensor:
        g = self.pooled(m)
        return reshape(sigmoid(self.mlp(g)), g.shape[:-1])


def mode_rearrangement(embeddings, confidences: np.ndarray):
    """Sort modes by descending confidence, ties by ascending index.

    ``embeddings`` is [..., K, D] (array or tensor) with ``confidences`` of
    shape [B, K] matching its first and mode axes, or both unbatched
    ([K, D] and [K]). Returns the reordered embeddings and ``perm`` such that
    output row ``j`` is input row ``perm[..., j]``. Batched embeddings may
    carry a target-agent axis ([B, A_t, K, D]); all agents move together.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if np.isnan(conf).any():
        raise ValueError("mode_rearrangement: NaN confidence")
    perm = np.argsort(-conf, axis=-1, kind="stable")
    if conf.ndim == 1:
        return embeddings[perm], perm
    b = np.arange(conf.shape[0])
    if embeddings.ndim == 3:  # [B, K, D]
        return embeddings[b[:, None], perm], perm
    a = np.arange(embeddings.shape[1])  # [B, A_t, K, D]
    return embeddings[b[:, None, None], a[None, :, None], perm[:, None, :]], perm


@dataclass
class LayerOutput:
    embeddings: Tensor  # [B, A_t, K, D], before rearrangement
    loc: Tensor  # [B, A_t, K, T_hat, 2]
    scale: Tensor  # [B, A_t, K, T_hat, 2]
    scores: Tensor  # [B, K]: confidences (marginal) or scene scores (joint)
    permutation: np.ndarray  # [B, K]


class ModeSeqDecoder(Module):
    def __init__(self, rng: np.random.Generator, dim: int = 64, heads: int = 4, n_layers: int = 2,
                 n_modes: int = 6, max_modes: int = 32, t_hat: int = 30, joint: bool = False,
                 share_heads: bool = False):
        self.joint = joint
        self.share_heads = share_heads
        self.bank = ModeQueryBank(rng, n_modes, max_modes, dim)
        self.query_proj = Linear(rng, dim, dim)
        self.layers = [ModeSeqLayer(rng, dim, heads, joint) for _ in range(n_layers)]
        n_heads = 1 if share_heads else n_layers
        self.heads = [PredictionHead(rng, dim, t_hat, with_confidence=not joint) for _ in range(n_heads)]
        self.scorers = [SceneScoreHead(rng, dim) for _ in range(n_heads)] if joint else []

    def initial_queries(self, emb: SceneEmbedding, k: int) -> Tensor:
        """Query bank rows plus a projection of each target's token: [B, A_t, K, D]."""
        target = self.query_proj(emb.target_tokens())  # [B, A_t, D]
        b, a, d = target.shape
        return reshape(target, (b, a, 1, d)) + self.bank(k)

    def _layer_head(self, ell: int):
        i = 0 if self.share_heads else ell
        return self.heads[i], (self.scorers[i] if self.joint else None)

    def decode(self, emb: SceneEmbedding, n_modes: int, variant: str = "parallel",
               rearrange: bool = True, queries: Optional[Tensor] = None) -> list[LayerOutput]:
        x = self.initial_queries(emb, n_modes) if queries is None else queries
        outputs = []
        n_layers = len(self.layers)
        for ell, layer in enumerate(self.layers):
            m = layer(x, emb, variant)
            head, scorer = self._layer_head(ell)
            loc, sc, conf = head(m)
            scores = scorer(m) if scorer is not None else reshape(conf, (conf.shape[0], conf.shape[-1]))
            if conf is not None and conf.shape[1] != 1:
                raise ValueError("marginal decoding expects one target per sample")
            bk = scores.shape
            perm = np.broadcast_to(np.arange(bk[1]), bk).copy()
            x = m
            if rearrange and ell < n_layers - 1:
                x, perm = mode_rearrangement(m, scores.data)
            outputs.append(LayerOutput(m, loc, sc, scores, perm))
        return outputs
