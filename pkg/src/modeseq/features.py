"""Turn scenes into padded, target-centric numeric batches for the network."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .scene import AGENT_KINDS, MAP_KINDS, FrameTransform, Scene, target_frame, transform_scene

#: Coordinates are divided by this before entering the network; the trajectory
#: head multiplies its raw output by the same factor.
POS_SCALE = 10.0
AGENT_FEATURES = 6 + len(AGENT_KINDS)  # x, y, vx, vy, cos h, sin h, kind one-hot
MAP_FEATURES = 4 + len(MAP_KINDS)  # x, y, unit direction, kind one-hot


@dataclass(frozen=True)
class Sample:
    """One forecasting problem: a scene seen from the frame of ``targets[0]``."""

    scene: Scene
    targets: tuple[int, ...]


@dataclass
class SceneBatch:
    agent_feats: np.ndarray  # [B, A, T_obs, F_a]
    agent_mask: np.ndarray  # [B, A] bool
    map_feats: np.ndarray  # [B, M, P, F_m]
    point_mask: np.ndarray  # [B, M, P] bool
    map_mask: np.ndarray  # [B, M] bool
    target_rows: np.ndarray  # [B, A_t] int, row of each target in agent axis
    gt: Optional[np.ndarray]  # [B, A_t, T_hat, 2] target frame, meters
    frames: list[FrameTransform]
    samples: list[Sample]

    def __len__(self) -> int:
        return self.agent_feats.shape[0]

    def subset(self, idx) -> "SceneBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return SceneBatch(
            self.agent_feats[idx], self.agent_mask[idx], self.map_feats[idx],
            self.point_mask[idx], self.map_mask[idx], self.target_rows[idx],
            None if self.gt is None else self.gt[idx],
            [self.frames[i] for i in idx], [self.samples[i] for i in idx])


def marginal_samples(scenes: Sequence[Scene]) -> list[Sample]:
    """One sample per (scene, target) pair, in scene then target order."""
    return [Sample(s, (t,)) for s in scenes for t in s.target_ids]


def joint_samples(scenes: Sequence[Scene]) -> list[Sample]:
    """One sample per scene covering all of its targets jointly."""
    return [Sample(s, tuple(s.target_ids)) for s in scenes]


def _agent_features(history: np.ndarray, kind: str) -> np.ndarray:
    t = history.shape[0]
    out = np.zeros((t, AGENT_FEATURES))
    out[:, 0:4] = history[:, 0:4] / POS_SCALE
    out[:, 4] = np.cos(history[:, 4])
    out[:, 5] = np.sin(history[:, 4])
    out[:, 6 + AGENT_KINDS.index(kind)] = 1.0
    return out


def _map_features(points: np.ndarray, kind: str) -> np.ndarray:
    seg = np.diff(points, axis=0)
    seg = np.concatenate([seg, seg[-1:]], axis=0)
    norm = np.linalg.norm(seg, axis=1, keepdims=True)
    direction = np.divide(seg, norm, out=np.zeros_like(seg), where=norm > 0)
    out = np.zeros((points.shape[0], MAP_FEATURES))
    out[:, 0:2] = points / POS_SCALE
    out[:, 2:4] = direction
    out[:, 4 + MAP_KINDS.index(kind)] = 1.0
    return out


def featurize(samples: Sequence[Sample], with_gt: bool = True) -> SceneBatch:
    """Pad and stack samples; every scene is expressed in its first target's frame.

    Raises ``ValueError`` for an empty sample list, a scene without agents or
    without map polylines, or mixed observation lengths.
    """
    if not samples:
        raise ValueError("cannot featurize an empty sample list")
    normalized, frames = [], []
    for smp in samples:
        if not smp.scene.agents:
            raise ValueError(f"scene {smp.scene.scene_id!r}: empty agent list")
        if not smp.scene.map_elements:
            raise ValueError(f"scene {smp.scene.scene_id!r}: no map polylines to attend to")
        tf = target_frame(smp.scene, smp.targets[0])
        normalized.append(transform_scene(smp.scene, tf))
        frames.append(tf)
    t_obs = {s.t_obs for s in normalized}
    if len(t_obs) != 1:
        raise ValueError(f"mixed observation lengths in batch: {sorted(t_obs)}")
    n_targets = {len(s.targets) for s in samples}
    if len(n_targets) != 1:
        raise ValueError(f"mixed target counts in batch: {sorted(n_targets)}")
    b = len(samples)
    a_max = max(len(s.agents) for s in normalized)
    m_max = max(len(s.map_elements) for s in normalized)
    p_max = max(len(m.points) for s in normalized for m in s.map_elements)
    (t,) = t_obs
    (a_t,) = n_targets

    agent_feats = np.zeros((b, a_max, t, AGENT_FEATURES))
    agent_mask = np.zeros((b, a_max), dtype=bool)
    map_feats = np.zeros((b, m_max, p_max, MAP_FEATURES))
    point_mask = np.zeros((b, m_max, p_max), dtype=bool)
    target_rows = np.zeros((b, a_t), dtype=np.int64)
    gt = None
    if with_gt:
        t_hat = {s.t_hat for s in normalized}
        if len(t_hat) != 1:
            raise ValueError(f"mixed prediction horizons in batch: {sorted(t_hat)}")
        gt = np.zeros((b, a_t, t_hat.pop(), 2))
    for i, (smp, sc) in enumerate(zip(samples, normalized)):
        for j, agent in enumerate(sc.agents):
            agent_feats[i, j] = _agent_features(agent.history, agent.kind)
            agent_mask[i, j] = True
        for j, poly in enumerate(sc.map_elements):
            n = len(poly.points)
            map_feats[i, j, :n] = _map_features(poly.points, poly.kind)
            point_mask[i, j, :n] = True
        for j, tid in enumerate(smp.targets):
            target_rows[i, j] = sc.agent_index(tid)
            if gt is not None:
                gt[i, j] = sc.ground_truth[tid]
    return SceneBatch(agent_feats, agent_mask, map_feats, point_mask, point_mask.any(axis=-1),
                      target_rows, gt, frames, list(samples))
