"""Label assignment: early-match-take-all, winner-take-all and the joint variant."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping

import numpy as np

from .config import TrainConfig


class Label(IntEnum):
    IGNORED = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class Assignment:
    selected: int
    labels: tuple[Label, ...]
    matched_set: frozenset[int]
    fallback_used: bool

    @property
    def negatives(self) -> list[int]:
        """Modes used as ranking negatives: negative-labelled and not matched."""
        return [k for k, lab in enumerate(self.labels)
                if lab == Label.NEGATIVE and k not in self.matched_set]


def mode_distances(trajectories: np.ndarray, gt: np.ndarray, mode: str = "endpoint") -> np.ndarray:
    """Distance of each trajectory [..., T, 2] to ``gt`` [..., T, 2] (broadcast on leading axes)."""
    trajectories = np.asarray(trajectories, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if trajectories.shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"trajectory shape {trajectories.shape[-2:]} != ground truth {gt.shape[-2:]}")
    if mode == "endpoint":
        return np.hypot(*np.moveaxis(trajectories[..., -1, :] - gt[..., -1, :], -1, 0))
    if mode == "average":
        return np.hypot(*np.moveaxis(trajectories - gt, -1, 0)).mean(axis=-1)
    raise ValueError(f"unknown distance mode {mode!r}")


def mode_distance(pred: np.ndarray, gt: np.ndarray, mode: str = "endpoint") -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    return float(mode_distances(pred, gt, mode))


def assign_batch(distances: np.ndarray, delta: float, strategy: str = "emta",
                 ignored_variant: str = "none"):
    """Vectorised assignment over a batch of distance rows [B, K].

    Returns ``(selected [B], labels [B, K], matched [B, K] bool, fallback [B] bool)``.
    Under ``wta`` selection is always the argmin; the matched set is still
    reported (and drives the ignored variants) so both strategies share one
    code path.
    """
    d = np.atleast_2d(np.asarray(distances, dtype=np.float64))
    b, k = d.shape
    matched = d <= delta
    any_match = matched.any(axis=1)
    first = np.argmax(matched, axis=1)
    nearest = np.argmin(d, axis=1)  # first minimum on ties
    if strategy == "emta":
        selected = np.where(any_match, first, nearest)
        fallback = ~any_match
    elif strategy == "wta":
        selected = nearest
        fallback = ~any_match
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    labels = np.zeros((b, k), dtype=np.int64)
    if ignored_variant == "other_matches":
        labels[matched] = Label.IGNORED
    elif ignored_variant == "early_mismatches":
        early = (np.arange(k)[None, :] < first[:, None]) & any_match[:, None]
        labels[early] = Label.IGNORED
    elif ignored_variant != "none":
        raise ValueError(f"unknown ignored variant {ignored_variant!r}")
    labels[np.arange(b), selected] = Label.POSITIVE
    return selected, labels, matched, fallback


def _assignment(distances: np.ndarray, delta: float, strategy: str, ignored: str) -> Assignment:
    sel, labels, matched, fallback = assign_batch(distances[None], delta, strategy, ignored)
    return Assignment(int(sel[0]), tuple(Label(int(v)) for v in labels[0]),
                      frozenset(int(i) for i in np.flatnonzero(matched[0])), bool(fallback[0]))


def assign_distances(distances, cfg: TrainConfig) -> Assignment:
    return _assignment(np.asarray(distances, dtype=np.float64), cfg.delta, cfg.strategy,
                       cfg.ignored_variant)


def emta_assign(preds, gt: np.ndarray, cfg: TrainConfig) -> Assignment:
    """Assign one scene; ``preds`` is a PredictionSet or a [K, T, 2] trajectory array."""
    traj = getattr(preds, "trajectories", preds)
    d = mode_distances(traj, np.asarray(gt)[None], cfg.distance_mode)
    return _assignment(d, cfg.delta, cfg.strategy, cfg.ignored_variant)


def joint_distances(trajectories: np.ndarray, gts: np.ndarray, mode: str = "endpoint",
                    aggregate: str = "max_over_agents") -> np.ndarray:
    """Scene-level distance per joint mode: trajectories [..., K, A, T, 2], gts [..., A, T, 2]."""
    per_agent = mode_distances(trajectories, np.expand_dims(gts, -4), mode)  # [..., K, A]
    if aggregate == "max_over_agents":
        return per_agent.max(axis=-1)
    if aggregate == "mean_over_agents":
        return per_agent.mean(axis=-1)
    raise ValueError(f"unknown joint aggregate {aggregate!r}")


def ma_emta_assign(preds, gt: Mapping[int, np.ndarray], cfg: TrainConfig) -> Assignment:
    """Joint assignment for a JointPredictionSet against per-agent ground truth.

    Only the ``none`` ignored-sample variant is defined for joint modes; other
    settings in ``cfg`` are not applied here.
    """
    missing = [t for t in preds.target_ids if t not in gt]
    if missing:
        raise KeyError(f"ground truth missing for target agents {missing}")
    gts = np.stack([np.asarray(gt[t], dtype=np.float64) for t in preds.target_ids])
    d = joint_distances(preds.trajectories, gts, cfg.distance_mode, cfg.joint_aggregate)
    return _assignment(d, cfg.joint_delta, cfg.strategy, "none")
