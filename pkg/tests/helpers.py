"""Small shared builders for tests."""
from __future__ import annotations

import numpy as np

from modeseq.config import ModelConfig
from modeseq.features import featurize, joint_samples, marginal_samples
from modeseq.network import ModeSeqNetwork
from modeseq.synthgen import PRESETS, generate_scenes


def fork_scenes(n=4, seed=0, preset="fork3"):
    return generate_scenes(PRESETS[preset], n, seed)


def interactive_scenes(n=4, seed=0):
    return generate_scenes(PRESETS["interactive"], n, seed, coupling="yield_or_proceed")


def small_network(seed=0, **overrides):
    params = {"hidden_dim": 16, "n_heads": 2, "n_layers": 2, "n_modes": 6, **overrides}
    cfg = ModelConfig(**params)
    return ModeSeqNetwork(cfg, seed=seed)


def embedding(network, scenes, joint=False):
    samples = joint_samples(scenes) if joint else marginal_samples(scenes)
    return network.encode(featurize(samples, with_gt=False))


def random_scene_embedding(seed=0, n=2, **overrides):
    net = small_network(seed, **overrides)
    return net, embedding(net, fork_scenes(n, seed))


def perturbed(rng, x, scale=1e-3):
    return x + rng.normal(scale=scale, size=np.shape(x))
