"""Registry of differentiable functions with random-input generators for gradient checks.

Each case maps a name to ``(fn, make_inputs)``. ``make_inputs(rng)`` returns
the arrays ``fn`` is differentiated against, optionally followed by a dict of
constant keyword arguments. Inputs of non-smooth functions are kept clear of
their kinks.
"""
from __future__ import annotations

import numpy as np

from gradcheck import away_from
from modeseq import numcore as nc
from modeseq.assign import mode_distances
from modeseq.config import TrainConfig
from modeseq.decoder import LayerOutput
from modeseq.losses import confidence_loss, focal_loss, laplace_nll, layer_objective, margin_ranking_loss


def _n(rng, *shape):
    return rng.normal(size=shape)


def _pos(rng, *shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _distinct(rng, *shape):
    # values spaced at least 0.05 apart so max pooling has a unique winner
    x = rng.permutation(np.prod(shape)).astype(float) * 0.05
    return (x + rng.uniform(0, 0.01, size=x.shape)).reshape(shape)


_WEIGHTS_RNG = np.random.default_rng(1234)
_ATT_W = {k: _WEIGHTS_RNG.normal(scale=0.4, size=(8, 8)) for k in ("wq", "wk", "wv", "wo")}
_ATT_B = {k: _WEIGHTS_RNG.normal(scale=0.1, size=(8,)) for k in ("bq", "bk", "bv", "bo")}


def _attention(q, k, v):
    mask = nc.causal_mask(3)
    return nc.attention(q, k, v, {**_ATT_W, **_ATT_B}, heads=2, mask=mask)


def _attention_params(q, wq, wo):
    weights = {**_ATT_W, **_ATT_B, "wq": wq, "wo": wo}
    return nc.attention(q, q, q, weights, heads=2)


def _mlp(x, w1, b1, w2, b2):
    return nc.linear(nc.tanh(nc.linear(x, w1, b1)), w2, b2)


def _mlp_loss(x, w1, b1, w2, b2):
    out = _mlp(x, w1, b1, w2, b2)
    return nc.mean(nc.power(out - 1.0, 2.0))


PRIMITIVES = {
    "add_broadcast": (lambda a, b: a + b, lambda r: [_n(r, 3, 4), _n(r, 4)]),
    "sub": (lambda a, b: a - b, lambda r: [_n(r, 3, 4), _n(r, 3, 1)]),
    "mul": (lambda a, b: a * b, lambda r: [_n(r, 3, 4), _n(r, 3, 4)]),
    "div": (lambda a, b: a / b, lambda r: [_n(r, 3, 4), _pos(r, 3, 4)]),
    "neg": (lambda a: -a, lambda r: [_n(r, 3, 4)]),
    "scale": (lambda a: nc.scale(a, -1.7), lambda r: [_n(r, 3, 4)]),
    "power": (lambda a: nc.power(a, 2.5), lambda r: [_pos(r, 3, 4)]),
    "exp": (nc.exp, lambda r: [_n(r, 3, 4)]),
    "log": (nc.log, lambda r: [_pos(r, 3, 4)]),
    "tanh": (nc.tanh, lambda r: [_n(r, 3, 4)]),
    "sigmoid": (nc.sigmoid, lambda r: [_n(r, 3, 4) * 3]),
    "softplus": (nc.softplus, lambda r: [_n(r, 3, 4) * 3]),
    "abs": (nc.abs, lambda r: [away_from(_n(r, 3, 4), [0.0])]),
    "relu": (nc.relu, lambda r: [away_from(_n(r, 3, 4), [0.0])]),
    "clip": (lambda a: nc.clip(a, -0.5, 0.5), lambda r: [away_from(_n(r, 3, 4), [-0.5, 0.5])]),
    "where": (lambda a, b: nc.where(np.arange(12).reshape(3, 4) % 3 == 0, a, b),
              lambda r: [_n(r, 3, 4), _n(r, 3, 4)]),
    "sum_axis": (lambda a: nc.sum(a, axis=1), lambda r: [_n(r, 3, 4)]),
    "sum_keepdims": (lambda a: nc.sum(a, axis=(0,), keepdims=True), lambda r: [_n(r, 3, 4)]),
    "mean": (lambda a: nc.mean(a, axis=0), lambda r: [_n(r, 3, 4)]),
    "reshape": (lambda a: nc.reshape(a, (4, 3)), lambda r: [_n(r, 3, 4)]),
    "transpose": (lambda a: nc.transpose(a, (2, 0, 1)), lambda r: [_n(r, 2, 3, 4)]),
    "swapaxes": (lambda a: nc.swapaxes(a, 0, 1), lambda r: [_n(r, 3, 4)]),
    "concat": (lambda a, b: nc.concat([a, b], axis=1), lambda r: [_n(r, 3, 4), _n(r, 3, 2)]),
    "stack": (lambda a, b: nc.stack([a, b], axis=0), lambda r: [_n(r, 3, 4), _n(r, 3, 4)]),
    "getitem_slice": (lambda a: a[1:, ::2], lambda r: [_n(r, 3, 4)]),
    "getitem_fancy": (lambda a: a[np.array([0, 2, 2]), np.array([1, 1, 3])], lambda r: [_n(r, 3, 4)]),
    "matmul": (nc.matmul, lambda r: [_n(r, 3, 4), _n(r, 4, 5)]),
    "matmul_batched": (nc.matmul, lambda r: [_n(r, 2, 3, 4), _n(r, 2, 4, 2)]),
    "linear": (nc.linear, lambda r: [_n(r, 2, 3, 4), _n(r, 4, 5), _n(r, 5)]),
    "layer_norm": (nc.layer_norm, lambda r: [_n(r, 3, 4), _pos(r, 4), _n(r, 4)]),
    "max_pool": (lambda a: nc.max_pool(a, axis=0), lambda r: [_distinct(r, 3, 4)]),
    "max_pool_masked": (lambda a: nc.max_pool(a, axis=1, mask=np.array([True, False, True, True])),
                        lambda r: [_distinct(r, 3, 4)]),
    "masked_softmax": (lambda a: nc.masked_softmax(a, np.where(np.tri(3, 4, 1) > 0, 0.0, -np.inf)),
                       lambda r: [_n(r, 3, 4)]),
    "attention_scores": (nc.attention_scores, lambda r: [_n(r, 3, 4), _n(r, 5, 4)]),
    "attention_mix": (nc.attention_mix, lambda r: [_pos(r, 3, 5), _n(r, 5, 4)]),
    "attention_qkv": (_attention, lambda r: [_n(r, 3, 8), _n(r, 3, 8), _n(r, 3, 8)]),
    "attention_weights": (_attention_params, lambda r: [_n(r, 3, 8), _n(r, 8, 8) * 0.4, _n(r, 8, 8) * 0.4]),
    "mlp_loss": (_mlp_loss, lambda r: [_n(r, 3, 4), _n(r, 4, 6) * 0.5, _n(r, 6), _n(r, 6, 2) * 0.5, _n(r, 2)]),
}


# losses


def _laplace_inputs(r):
    gt = _n(r, 4, 5, 2)
    loc = gt + away_from(_n(r, 4, 5, 2), [0.0])
    return [loc, _pos(r, 4, 5, 2)], {"gt": gt}


def _laplace(loc, scale_, gt):
    return laplace_nll(loc, scale_, gt)


def _focal_inputs(r):
    return [r.uniform(0.05, 0.95, size=(3, 4))]


_FOCAL_Z = np.array([[1, 0, 0, 1], [0, 1, 0, 0], [1, 1, 0, 0]])


def _ranking_inputs(r):
    # keep every gamma - (c_sel - c_k) at least 0.01 away from the hinge at 0
    while True:
        c = r.uniform(0.05, 0.95, size=(3, 5))
        gap = 0.1 - (c[np.arange(3), _RANK_SEL][:, None] - c)
        if np.all(np.abs(gap) > 0.01):
            return [c]


_RANK_SEL = np.array([0, 2, 4])
_RANK_NEG = np.array([[0, 1, 1, 0, 1], [1, 1, 0, 1, 0], [1, 0, 1, 1, 0]], dtype=bool)


def _confidence_inputs(r):
    return [r.uniform(0.05, 0.95, size=(3, 4))]


_CONF_LABELS = np.array([[1, 0, -1, 0], [0, 1, 0, 0], [-1, -1, 1, 0]])


def _objective_inputs(r):
    # B=3 samples, K=4 modes, T=5; distances kept clear of delta so assignment is locally constant
    cfg = TrainConfig()
    while True:
        gt = _n(r, 3, 1, 5, 2) * 2
        loc = gt[:, :, None] + _n(r, 3, 1, 4, 5, 2) * 1.5
        d = mode_distances(loc[:, 0], gt[:, 0][:, None], cfg.distance_mode)
        if np.all(np.abs(d - cfg.delta) > 0.05) and np.all(np.abs(loc - gt[:, :, None]) > 1e-3):
            break
    while True:
        scores = r.uniform(0.1, 0.9, size=(3, 4))
        if np.all(np.abs(0.1 - (scores[:, :, None] - scores[:, None, :])) > 0.01):
            break
    return [loc, _pos(r, 3, 1, 4, 5, 2), scores], {"gt": gt}


def _objective(loc, scale_, scores, gt):
    out = LayerOutput(None, loc, scale_, scores, np.tile(np.arange(4), (3, 1)))
    return layer_objective(out, gt, TrainConfig(strategy="emta", ignored_variant="other_matches"))[0]


LOSSES = {
    "laplace_nll": (_laplace, _laplace_inputs),
    "focal_loss": (lambda c: focal_loss(c, _FOCAL_Z, 2.0), _focal_inputs),
    "margin_ranking_loss": (lambda c: margin_ranking_loss(c, _RANK_SEL, 0.1, negatives=_RANK_NEG),
                            _ranking_inputs),
    "confidence_loss": (lambda c: confidence_loss(c, _CONF_LABELS, 2.0), _confidence_inputs),
    "layer_objective": (_objective, _objective_inputs),
}

ALL_CASES = {**PRIMITIVES, **LOSSES}
