"""Encoder plus decoder assembled from a :class:`ModelConfig`."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ModelConfig
from .decoder import LayerOutput, ModeSeqDecoder
from .encoder import SceneEmbedding, SceneEncoder
from .features import SceneBatch
from .numcore import Module


class ModeSeqNetwork(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = SceneEncoder(rng, cfg.hidden_dim, cfg.n_heads, cfg.t_obs)
        self.decoder = ModeSeqDecoder(rng, cfg.hidden_dim, cfg.n_heads, cfg.n_layers, cfg.n_modes,
                                      cfg.max_modes, cfg.t_hat, joint=cfg.joint,
                                      share_heads=cfg.share_heads)

    def encode(self, batch: SceneBatch) -> SceneEmbedding:
        return self.encoder(batch)

    def __call__(self, batch: SceneBatch, n_modes: Optional[int] = None, variant: Optional[str] = None,
                 rearrange: Optional[bool] = None) -> list[LayerOutput]:
        cfg = self.cfg
        emb = self.encoder(batch)
        return self.decoder.decode(emb, n_modes or cfg.n_modes, variant or cfg.variant,
                                   cfg.rearrange if rearrange is None else rearrange)
