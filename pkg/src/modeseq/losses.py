"""Regression, confidence and ranking losses, per layer and averaged over layers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assign import Assignment, Label, assign_batch, joint_distances, mode_distances
from .config import TrainConfig
from .decoder import LayerOutput
from .numcore import Tensor, abs, as_tensor, clip, log, power, relu, scale, sum, where

CONF_EPS = 1e-7


def laplace_nll(loc, scale_, gt) -> Tensor:
    """Laplace negative log-likelihood per trajectory.

    Inputs are [..., T, 2]; the result has the leading shape and equals the
    sum over steps and coordinates of ``log(2b) + |y - mu| / b`` divided by T.
    """
    loc, scale_ = as_tensor(loc), as_tensor(scale_)
    gt = np.asarray(gt, dtype=np.float64)
    if np.any(scale_.data <= 0):
        raise ValueError("laplace_nll: scales must be strictly positive")
    per = log(scale(scale_, 2.0)) + abs(loc - gt) / scale_
    t = loc.shape[-2]
    return scale(sum(per, axis=(-2, -1)), 1.0 / t)


def focal_loss(conf, z, gamma: float = 2.0) -> Tensor:
    """Elementwise binary focal loss; ``conf`` is clamped to [1e-7, 1 - 1e-7]."""
    c = clip(as_tensor(conf), CONF_EPS, 1.0 - CONF_EPS)
    z = np.broadcast_to(np.asarray(z), c.shape)
    one_minus = 1.0 - c
    pos = power(one_minus, gamma) * -log(c)
    neg = power(c, gamma) * -log(one_minus)
    return where(z == 1, pos, neg)


def _labels_of(assignment_or_labels) -> np.ndarray:
    if isinstance(assignment_or_labels, Assignment):
        return np.array([int(v) for v in assignment_or_labels.labels])
    return np.asarray(assignment_or_labels, dtype=np.int64)


def confidence_loss(confidences, assignment, gamma: float = 2.0) -> Tensor:
    """Mean focal loss over non-ignored modes, per row of [..., K] confidences."""
    labels = _labels_of(assignment)
    weight = (labels != Label.IGNORED).astype(np.float64)
    count = weight.sum(axis=-1)
    if np.any(count == 0):
        raise ValueError("confidence_loss: every mode is ignored")
    f = focal_loss(confidences, labels == Label.POSITIVE, gamma)
    return sum(f * weight, axis=-1) / count


def margin_ranking_loss(confidences, assignment, gamma: float = 0.1, negatives=None) -> Tensor:
    """Mean hinge ``max(0, gamma - (c_sel - c_k))`` over the negative set, 0 if it is empty.

    With an :class:`Assignment` the negatives are its unmatched negative
    modes; in batched use pass ``assignment`` as the selected indices [B] and
    ``negatives`` as a boolean [B, K] mask.
    """
    conf = as_tensor(confidences)
    if isinstance(assignment, Assignment):
        selected = np.array([assignment.selected])
        mask = np.zeros((1, conf.shape[-1]))
        mask[0, assignment.negatives] = 1.0
        conf2 = conf.reshape(1, -1)
        return _ranking_rows(conf2, selected, mask, gamma).reshape(())
    return _ranking_rows(conf, np.asarray(assignment), np.asarray(negatives, dtype=np.float64), gamma)


def _ranking_rows(conf: Tensor, selected: np.ndarray, mask: np.ndarray, gamma: float) -> Tensor:
    b = np.arange(conf.shape[0])
    top = conf[b, selected].reshape(-1, 1)
    hinge = relu(gamma - (top - conf)) * mask
    count = np.maximum(mask.sum(axis=-1), 1.0)
    return sum(hinge, axis=-1) / count


@dataclass
class LayerTerms:
    regression: float
    classification: float
    ranking: float
    total: float
    selected: np.ndarray  # [B]
    labels: np.ndarray  # [B, K]
    matched: np.ndarray  # [B, K]
    fallback: np.ndarray  # [B]


def layer_objective(out: LayerOutput, gt: np.ndarray, cfg: TrainConfig,
                    joint: bool = False) -> tuple[Tensor, LayerTerms]:
    """Objective of one decoding layer against ``gt`` [B, A_t, T, 2].

    The assignment is computed from this layer's own trajectories. Joint
    decoding uses the aggregated scene distance, ``joint_delta`` and the
    ``none`` ignored-sample rule.
    """
    loc, sc, scores = out.loc, out.scale, out.scores
    b_n, a_n, k_n = loc.shape[:3]
    traj = loc.data
    if joint:
        d = joint_distances(np.swapaxes(traj, 1, 2), gt, cfg.distance_mode, cfg.joint_aggregate)
        sel, labels, matched, fallback = assign_batch(d, cfg.joint_delta, cfg.strategy, "none")
    else:
        d = mode_distances(traj[:, 0], gt[:, 0][:, None], cfg.distance_mode)
        sel, labels, matched, fallback = assign_batch(d, cfg.delta, cfg.strategy, cfg.ignored_variant)

    bi = np.arange(b_n)[:, None]
    ai = np.arange(a_n)[None, :]
    nll = laplace_nll(loc[bi, ai, sel[:, None]], sc[bi, ai, sel[:, None]], gt)  # [B, A_t]
    reg = nll.mean()
    cls = confidence_loss(scores, labels, cfg.focal_gamma).mean()
    negatives = (labels == Label.NEGATIVE) & ~matched
    rank = margin_ranking_loss(scores, sel, cfg.margin, negatives=negatives).mean()
    total = reg + scale(cls, cfg.lambda_cls) + scale(rank, cfg.lambda_rank)
    terms = LayerTerms(reg.item(), cls.item(), rank.item(), total.item(), sel, labels, matched, fallback)
    return total, terms


def total_objective(outputs: Sequence[LayerOutput], gt: np.ndarray, cfg: TrainConfig,
                    joint: bool = False) -> tuple[Tensor, list[LayerTerms]]:
    """Average of the per-layer objectives, with each layer's breakdown."""
    if not outputs:
        raise ValueError("total_objective needs at least one layer output")
    totals, terms = [], []
    for out in outputs:
        t, info = layer_objective(out, gt, cfg, joint)
        totals.append(t)
        terms.append(info)
    acc = totals[0]
    for t in totals[1:]:
        acc = acc + t
    return scale(acc, 1.0 / len(totals)), terms
