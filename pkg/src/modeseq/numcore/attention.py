"""Masked softmax and multi-head scaled dot-product attention.

Forward reductions here are written so each output row is computed with the
same floating-point operation sequence regardless of how many other rows (or
trailing masked columns) are present. That is what makes the causal decoder's
prefix outputs bit-identical when the mode count changes.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, _make, _unbroadcast, as_tensor, linear, reshape, scale, transpose

NEG_INF = -1e30
_BLOCKED = NEG_INF / 2


def causal_mask(k: int) -> np.ndarray:
    """Additive [k, k] mask: 0 where column <= row, -inf above the diagonal."""
    if k < 1:
        raise ValueError(f"causal_mask needs k >= 1, got {k}")
    m = np.zeros((k, k))
    m[np.triu_indices(k, 1)] = -np.inf
    return m


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """Additive mask from a boolean [..., m] validity array, shaped [..., 1, m]."""
    valid = np.asarray(valid, dtype=bool)
    return np.where(valid, 0.0, -np.inf)[..., None, :]


def _finite_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    return np.where(mask <= _BLOCKED, NEG_INF, mask)


def masked_softmax(logits, mask=None) -> Tensor:
    """Softmax over the last axis with an additive 0 / -inf mask.

    Masked entries come out as exactly 0. Raises if any row is fully masked.
    """
    logits = as_tensor(logits)
    z = logits.data
    blocked = None
    if mask is not None:
        fm = _finite_mask(mask)
        try:
            z = z + fm
        except ValueError:
            raise ValueError(f"masked_softmax: mask shape {fm.shape} does not fit logits {logits.shape}") from None
        blocked = np.broadcast_to(fm <= _BLOCKED, z.shape)
        if blocked.all(axis=-1).any():
            raise ValueError("masked_softmax: a row has every entry masked")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    if blocked is not None:
        e = np.where(blocked, 0.0, e)
    # cumulative sum is strictly sequential, so trailing zeros never change the row total
    total = np.cumsum(e, axis=-1)[..., -1:]
    p = e / total

    def fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (logits,), fn, "masked_softmax")


def attention_scores(q, k) -> Tensor:
    """Pairwise dot products [..., n, d] x [..., m, d] -> [..., n, m]."""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention_scores: feature mismatch {q.shape} vs {k.shape}")
    out = (q.data[..., :, None, :] * k.data[..., None, :, :]).sum(axis=-1)

    def fn(g):
        gq = np.matmul(g, k.data)
        gk = np.matmul(np.swapaxes(g, -1, -2), q.data)
        return _unbroadcast(gq, q.shape), _unbroadcast(gk, k.shape)

    return _make(out, (q, k), fn, "attention_scores")


def attention_mix(w, v) -> Tensor:
    """Weighted sum of value rows: [..., n, m] x [..., m, d] -> [..., n, d]."""
    w, v = as_tensor(w), as_tensor(v)
    if w.shape[-1] != v.shape[-2]:
        raise ValueError(f"attention_mix: shape mismatch {w.shape} vs {v.shape}")
    out = (w.data[..., :, :, None] * v.data[..., None, :, :]).sum(axis=-2)

    def fn(g):
        gw = np.matmul(g, np.swapaxes(v.data, -1, -2))
        gv = np.matmul(np.swapaxes(w.data, -1, -2), g)
        return _unbroadcast(gw, w.shape), _unbroadcast(gv, v.shape)

    return _make(out, (w, v), fn, "attention_mix")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, dim = x.shape
    x = reshape(x, tuple(lead) + (n, heads, dim // heads))
    nd = len(lead)
    return transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    nd = len(lead)
    x = transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))
    return reshape(x, tuple(lead) + (n, h * d))


def attention(query, key, value, weights: dict, heads: int, mask=None,
              return_weights: bool = False):
    """Multi-head attention of ``query`` [..., n, D] over ``key``/``value`` [..., m, D].

    ``weights`` holds the four projections ``wq, wk, wv, wo`` ([D, D]) and
    their biases ``bq, bk, bv, bo``. ``mask`` is additive, broadcastable to
    [..., n, m]; it is shared by all heads.
    """
    query, key, value = as_tensor(query), as_tensor(key), as_tensor(value)
    dim = query.shape[-1]
    if heads < 1 or dim % heads:
        raise ValueError(f"attention: model width {dim} not divisible by {heads} heads")
    if key.shape[-1] != dim or value.shape[-1] != dim or key.shape[-2] != value.shape[-2]:
        raise ValueError(f"attention: query {query.shape}, key {key.shape}, value {value.shape}")
    q = _split_heads(linear(query, weights["wq"], weights.get("bq")), heads)
    k = _split_heads(linear(key, weights["wk"], weights.get("bk")), heads)
    v = _split_heads(linear(value, weights["wv"], weights.get("bv")), heads)
    logits = attention_scores(q, k)
    logits = scale(logits, 1.0 / np.sqrt(dim // heads))
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        n, m = query.shape[-2], key.shape[-2]
        if mask.shape[-2:] not in {(n, m), (1, m), (n, 1), (1, 1)} and mask.ndim >= 2:
            raise ValueError(f"attention: mask shape {mask.shape} incompatible with ({n}, {m})")
        mask = np.expand_dims(mask, -3) if mask.ndim >= 2 else mask
    attn = masked_softmax(logits, mask)
    out = linear(_merge_heads(attention_mix(attn, v)), weights["wo"], weights.get("bo"))
    if return_weights:
        return out, attn
    return out
