from dataclasses import replace

import numpy as np
import pytest

from gradcheck import relative_error
from helpers import fork_scenes
from modeseq.encoder import SceneEncoder
from modeseq.features import Sample, featurize, marginal_samples
from modeseq.numcore import backward, no_grad
from modeseq.scene import AgentTrack, MapPolyline, Scene

DIM = 8


def encoder(seed=0, dim=DIM):
    return SceneEncoder(np.random.default_rng(seed), dim, 2, t_obs=10)


def encode(enc, scenes):
    with no_grad():
        return enc(featurize(marginal_samples(scenes), with_gt=False))


def tiny_scene():
    hist = np.zeros((10, 5))
    hist[:, 0] = np.arange(-9.0, 1.0)
    hist[:, 2] = 10.0
    return Scene("one", 10, 30, [AgentTrack(0, "vehicle", hist)],
                 [MapPolyline(0, "lane", [[-10.0, 0.0], [10.0, 0.0]])], [0], {0: np.zeros((30, 2))})


def test_single_agent_single_polyline_shapes():
    emb = encode(encoder(), [tiny_scene()])
    assert emb.agent_tokens.shape == (1, 1, DIM)
    assert emb.map_tokens.shape == (1, 1, DIM)
    assert emb.target_index_map([0]) == {0: 0}


def test_shapes_do_not_depend_on_coordinates():
    s = fork_scenes(1, 0)[0]
    enc = encoder()
    a = encode(enc, [s])
    far = replace(s, agents=[AgentTrack(x.id, x.kind, x.history + [1e3, -1e3, 0, 0, 0]) for x in s.agents])
    b = encode(enc, [far])
    assert a.agent_tokens.shape == b.agent_tokens.shape and a.map_tokens.shape == b.map_tokens.shape


def test_map_order_leaves_agent_tokens_unchanged():
    enc = encoder(1)
    rng = np.random.default_rng(0)
    for s in fork_scenes(5, 1):
        perm = rng.permutation(len(s.map_elements))
        shuffled = replace(s, map_elements=[s.map_elements[i] for i in perm])
        a, b = encode(enc, [s]), encode(enc, [shuffled])
        assert np.abs(a.agent_tokens.data - b.agent_tokens.data).max() < 1e-9
        assert np.abs(a.map_tokens.data[0, perm] - b.map_tokens.data[0]).max() < 1e-9


def test_agent_order_permutes_tokens_and_keeps_target():
    enc = encoder(2)
    rng = np.random.default_rng(1)
    checked = 0
    for s in fork_scenes(12, 2):
        if len(s.agents) < 3:
            continue
        rest = rng.permutation(np.arange(1, len(s.agents)))
        order = [0, *rest][::-1]  # target moves to the back
        shuffled = replace(s, agents=[s.agents[i] for i in order])
        a, b = encode(enc, [s]), encode(enc, [shuffled])
        ta, tb = a.target_tokens().data, b.target_tokens().data
        assert np.abs(ta - tb).max() < 1e-9
        assert np.abs(a.agent_tokens.data[0, order] - b.agent_tokens.data[0]).max() < 1e-9
        checked += 1
    assert checked >= 3


def test_padding_does_not_leak():
    enc = encoder(3)
    scenes = fork_scenes(6, 3)
    together = encode(enc, scenes)
    for i, s in enumerate(scenes):
        alone = encode(enc, [s])
        n_a, n_m = len(s.agents), len(s.map_elements)
        assert np.abs(together.agent_tokens.data[i, :n_a] - alone.agent_tokens.data[0]).max() < 1e-9
        assert np.abs(together.map_tokens.data[i, :n_m] - alone.map_tokens.data[0]).max() < 1e-9


def test_deterministic_given_parameters():
    s = fork_scenes(2, 4)
    assert np.array_equal(encode(encoder(5), s).agent_tokens.data, encode(encoder(5), s).agent_tokens.data)


def test_readout_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    enc = encoder(6, dim=4)
    batch = featurize(marginal_samples(fork_scenes(2, 6)), with_gt=False)
    emb = enc(batch)
    wa, wm = rng.normal(size=emb.agent_tokens.shape), rng.normal(size=emb.map_tokens.shape)

    def readout():
        e = enc(batch)
        return (e.agent_tokens * wa).sum() + (e.map_tokens * wm).sum()

    enc.zero_grad()
    backward(readout())
    h = 1e-6
    worst = 0.0
    params = enc.parameters()
    for name in sorted(params):
        if name.endswith(".bk"):
            continue  # softmax ignores a shared key bias, so both gradients are zero up to rounding
        p = params[name]
        idx = [tuple(rng.integers(0, n) for n in p.shape) for _ in range(3)]
        analytic = np.array([p.grad[i] for i in idx])
        numeric = []
        with no_grad():
            for i in idx:
                old = p.data[i]
                p.data[i] = old + h
                up = readout().item()
                p.data[i] = old - h
                down = readout().item()
                p.data[i] = old
                numeric.append((up - down) / (2 * h))
        worst = max(worst, relative_error(analytic, np.array(numeric)))
    assert worst < 1e-4


def test_errors():
    enc = encoder()
    s = tiny_scene()
    with pytest.raises(ValueError, match="empty"):
        featurize([])
    with pytest.raises(ValueError, match="map polylines"):
        featurize([Sample(replace(s, map_elements=[]), (0,))])
    batch = featurize([Sample(s, (0,))], with_gt=False)
    batch.agent_feats = batch.agent_feats[:, :0]
    batch.agent_mask = batch.agent_mask[:, :0]
    with pytest.raises(ValueError, match="empty agent list"):
        enc(batch)
    short = featurize([Sample(s, (0,))], with_gt=False)
    short.agent_feats = short.agent_feats[:, :, :5]
    with pytest.raises(ValueError, match="history length"):
        enc(short)
