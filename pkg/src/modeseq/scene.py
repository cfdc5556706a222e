"""Scene records, trajectory containers, JSON IO and target-centric framing.

Scenes are immutable: arrays are stored read-only and every transform returns
a new :class:`Scene`.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

AGENT_KINDS = ("vehicle", "pedestrian", "cyclist")
MAP_KINDS = ("lane", "branch", "boundary")
STATE_DIM = 5  # x, y, vx, vy, heading

#: ``Trajectory`` values throughout the package are float arrays of shape [T, 2].
Trajectory = np.ndarray


class SceneFormatError(ValueError):
    """A scene file could not be parsed; the message names the offending field."""


class SceneValidationError(ValueError):
    """A scene violates one of its invariants; the message names the invariant."""


def wrap_angle(a):
    """Map angles (scalar or array) onto (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2.0 * np.pi)


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AgentTrack:
    id: int
    kind: str
    history: np.ndarray  # [T_obs, 5]

    def __post_init__(self):
        object.__setattr__(self, "history", _frozen(self.history))

    @property
    def position(self) -> np.ndarray:
        return self.history[-1, :2]

    @property
    def heading(self) -> float:
        return float(self.history[-1, 4])

    def __eq__(self, other):
        return (isinstance(other, AgentTrack) and self.id == other.id and self.kind == other.kind
                and np.array_equal(self.history, other.history))


@dataclass(frozen=True, eq=False)
class MapPolyline:
    id: int
    kind: str
    points: np.ndarray  # [P, 2]

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))

    def __eq__(self, other):
        return (isinstance(other, MapPolyline) and self.id == other.id and self.kind == other.kind
                and np.array_equal(self.points, other.points))


def _dict_eq(a: Optional[dict], b: Optional[dict]) -> bool:
    if a is None or b is None:
        return a is b
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@dataclass(frozen=True, eq=False)
class Scene:
    """One forecasting instance.

    ``oracle_branches`` (synthetic scenes only) maps each target id to an array
    [B, T_hat, 2] of noiseless candidate futures; ``oracle_choice`` records
    which branch the ground truth was sampled from and ``forbidden_pairs``
    lists joint branch combinations that have zero probability.
    """

    scene_id: str
    t_obs: int
    t_hat: int
    agents: Tuple[AgentTrack, ...]
    map_elements: Tuple[MapPolyline, ...]
    target_ids: Tuple[int, ...]
    ground_truth: Dict[int, np.ndarray]
    oracle_branches: Optional[Dict[int, np.ndarray]] = None
    oracle_choice: Optional[Dict[int, int]] = None
    forbidden_pairs: Tuple[Tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "map_elements", tuple(self.map_elements))
        object.__setattr__(self, "target_ids", tuple(int(t) for t in self.target_ids))
        object.__setattr__(self, "ground_truth",
                           {int(k): _frozen(v) for k, v in self.ground_truth.items()})
        if self.oracle_branches is not None:
            object.__setattr__(self, "oracle_branches",
                               {int(k): _frozen(v) for k, v in self.oracle_branches.items()})
        if self.oracle_choice is not None:
            object.__setattr__(self, "oracle_choice",
                               {int(k): int(v) for k, v in self.oracle_choice.items()})
        object.__setattr__(self, "forbidden_pairs",
                           tuple((int(a), int(b)) for a, b in self.forbidden_pairs))

    def agent(self, agent_id: int) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"scene {self.scene_id!r} has no agent {agent_id}")

    def agent_index(self, agent_id: int) -> int:
        for i, a in enumerate(self.agents):
            if a.id == agent_id:
                return i
        raise KeyError(f"scene {self.scene_id!r} has no agent {agent_id}")

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.scene_id == other.scene_id and self.t_obs == other.t_obs
                and self.t_hat == other.t_hat and self.agents == other.agents
                and self.map_elements == other.map_elements
                and self.target_ids == other.target_ids
                and _dict_eq(self.ground_truth, other.ground_truth)
                and _dict_eq(self.oracle_branches, other.oracle_branches)
                and self.oracle_choice == other.oracle_choice
                and self.forbidden_pairs == other.forbidden_pairs)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """K scored trajectory hypotheses for one target, in sequence order.

    Confidences lie in [0, 1] and need not sum to one.
    """

    trajectories: np.ndarray  # [K, T, 2]
    scales: np.ndarray  # [K, T, 2], strictly positive Laplace scales
    confidences: np.ndarray  # [K]
    scene_id: str = ""
    target_id: int = -1
    kind: str = "vehicle"

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=np.float64)
        sc = np.asarray(self.scales, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        if traj.ndim != 3 or traj.shape[-1] != 2:
            raise ValueError(f"trajectories must be [K, T, 2], got {traj.shape}")
        if sc.shape != traj.shape:
            raise ValueError(f"scales shape {sc.shape} != trajectories shape {traj.shape}")
        if conf.shape != traj.shape[:1]:
            raise ValueError(f"confidences shape {conf.shape} != ({traj.shape[0]},)")
        if np.any(sc <= 0):
            raise ValueError("scales must be strictly positive")
        if np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "trajectories", _frozen(traj))
        object.__setattr__(self, "scales", _frozen(sc))
        object.__setattr__(self, "confidences", _frozen(conf))

    @property
    def n_modes(self) -> int:
        return int(self.confidences.shape[0])

    def truncate(self, k: int) -> "PredictionSet":
        return replace(self, trajectories=self.trajectories[:k], scales=self.scales[:k],
                       confidences=self.confidences[:k])


@dataclass(frozen=True, eq=False)
class JointPredictionSet:
    """K joint modes; each covers every target in ``target_ids`` (same order)."""

    target_ids: Tuple[int, ...]
    trajectories: np.ndarray  # [K, A, T, 2]
    scales: np.ndarray  # [K, A, T, 2]
    scene_scores: np.ndarray  # [K]
    scene_id: str = ""
    kinds: Tuple[str, ...] = ()

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=np.float64)
        sc = np.asarray(self.scales, dtype=np.float64)
        score = np.asarray(self.scene_scores, dtype=np.float64)
        ids = tuple(int(t) for t in self.target_ids)
        if traj.ndim != 4 or traj.shape[-1] != 2 or traj.shape[1] != len(ids):
            raise ValueError(f"trajectories must be [K, {len(ids)}, T, 2], got {traj.shape}")
        if sc.shape != traj.shape or score.shape != traj.shape[:1]:
            raise ValueError("scales / scene_scores do not match trajectories")
        if np.any(sc <= 0) or np.any((score < 0) | (score > 1)):
            raise ValueError("scales must be positive and scene scores in [0, 1]")
        object.__setattr__(self, "target_ids", ids)
        object.__setattr__(self, "kinds", tuple(self.kinds) or ("vehicle",) * len(ids))
        object.__setattr__(self, "trajectories", _frozen(traj))
        object.__setattr__(self, "scales", _frozen(sc))
        object.__setattr__(self, "scene_scores", _frozen(score))

    @property
    def n_modes(self) -> int:
        return int(self.scene_scores.shape[0])

    def marginal(self, target_id: int) -> "PredictionSet":
        """Per-agent view of the joint modes, scored by the scene score."""
        a = self.target_ids.index(int(target_id))
        return PredictionSet(self.trajectories[:, a], self.scales[:, a], self.scene_scores,
                             scene_id=self.scene_id, target_id=int(target_id), kind=self.kinds[a])


# ---------------------------------------------------------------------------
# validation


def validate_scene(scene: Scene) -> Scene:
    """Check every scene invariant, raising :class:`SceneValidationError` on the first failure."""

    def fail(msg: str):
        raise SceneValidationError(f"scene {scene.scene_id!r}: {msg}")

    if scene.t_obs < 1 or scene.t_hat < 1:
        fail(f"t_obs and t_hat must be >= 1 (got {scene.t_obs}, {scene.t_hat})")
    if not scene.agents:
        fail("at least one agent is required")
    ids = [a.id for a in scene.agents]
    if len(set(ids)) != len(ids):
        fail("agent ids must be unique")
    for a in scene.agents:
        if a.kind not in AGENT_KINDS:
            fail(f"agent {a.id}: kind {a.kind!r} not in {AGENT_KINDS}")
        if a.history.shape != (scene.t_obs, STATE_DIM):
            fail(f"agent {a.id}: history shape {a.history.shape} != ({scene.t_obs}, {STATE_DIM}) "
                 "(history length must equal t_obs)")
        if not np.all(np.isfinite(a.history)):
            fail(f"agent {a.id}: non-finite history values")
        h = a.history[:, 4]
        if np.any(h <= -np.pi) or np.any(h > np.pi):
            fail(f"agent {a.id}: heading outside (-pi, pi]")
    map_ids = [m.id for m in scene.map_elements]
    if len(set(map_ids)) != len(map_ids):
        fail("map polyline ids must be unique")
    for m in scene.map_elements:
        if m.kind not in MAP_KINDS:
            fail(f"polyline {m.id}: kind {m.kind!r} not in {MAP_KINDS}")
        if m.points.ndim != 2 or m.points.shape[1] != 2 or m.points.shape[0] < 2:
            fail(f"polyline {m.id}: needs >= 2 points of shape (P, 2), got {m.points.shape}")
        if not np.all(np.isfinite(m.points)):
            fail(f"polyline {m.id}: non-finite coordinates")
    if not scene.target_ids:
        fail("at least one target id is required")
    for t in scene.target_ids:
        if t not in ids:
            fail(f"target id {t} does not reference an existing agent")
    if len(set(scene.target_ids)) != len(scene.target_ids):
        fail("target ids must be unique")
    if set(scene.ground_truth) != set(scene.target_ids):
        fail(f"ground truth keys {sorted(scene.ground_truth)} != target ids {sorted(scene.target_ids)}")
    for t, fut in scene.ground_truth.items():
        if fut.shape != (scene.t_hat, 2):
            fail(f"target {t}: future shape {fut.shape} != ({scene.t_hat}, 2)")
        if not np.all(np.isfinite(fut)):
            fail(f"target {t}: non-finite future")
    if scene.oracle_branches is not None:
        for t, br in scene.oracle_branches.items():
            if t not in scene.target_ids:
                fail(f"oracle branches for non-target {t}")
            if br.ndim != 3 or br.shape[1:] != (scene.t_hat, 2) or br.shape[0] < 1:
                fail(f"target {t}: oracle branch array shape {br.shape} invalid")
            if not np.all(np.isfinite(br)):
                fail(f"target {t}: non-finite oracle branch")
    if scene.oracle_choice is not None:
        for t, c in scene.oracle_choice.items():
            if scene.oracle_branches is None or t not in scene.oracle_branches:
                fail(f"oracle choice for target {t} without oracle branches")
            if not 0 <= c < scene.oracle_branches[t].shape[0]:
                fail(f"target {t}: oracle choice {c} out of range")
    return scene


# ---------------------------------------------------------------------------
# JSON IO


def _scene_to_obj(scene: Scene) -> dict:
    obj = {
        "scene_id": scene.scene_id,
        "t_obs": scene.t_obs,
        "t_hat": scene.t_hat,
        "agents": [{"id": a.id, "kind": a.kind, "history": a.history.tolist()} for a in scene.agents],
        "map": [{"id": m.id, "kind": m.kind, "points": m.points.tolist()} for m in scene.map_elements],
        "targets": list(scene.target_ids),
        "future": {str(t): scene.ground_truth[t].tolist() for t in scene.target_ids},
    }
    if scene.oracle_branches is not None:
        obj["oracle_branches"] = {str(t): v.tolist() for t, v in scene.oracle_branches.items()}
    if scene.oracle_choice is not None:
        obj["oracle_choice"] = {str(t): c for t, c in scene.oracle_choice.items()}
    if scene.forbidden_pairs:
        obj["forbidden_pairs"] = [list(p) for p in scene.forbidden_pairs]
    return obj


def dumps_scene(scene: Scene) -> str:
    """Canonical serialisation: fixed key order, compact separators, shortest float repr."""
    return json.dumps(_scene_to_obj(scene), separators=(",", ":"), allow_nan=False) + "\n"


def save_scene(scene: Scene, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_scene(scene))
    os.replace(tmp, path)
    return path


def _get(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise SceneFormatError(f"{where}: expected an object")
    if key not in obj:
        raise SceneFormatError(f"{where}: missing key {key!r}")
    return obj[key]


def _array(value, where: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SceneFormatError(f"{where}: expected a rectangular numeric array") from None
    if arr.ndim != ndim and not (arr.size == 0 and ndim > 1):
        raise SceneFormatError(f"{where}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SceneFormatError(f"{where}: expected an integer, got {value!r}")
    return value


def scene_from_obj(obj: dict, source: str = "<scene>") -> Scene:
    agents = []
    for i, a in enumerate(_get(obj, "agents", source)):
        w = f"{source}: agents[{i}]"
        hist = _array(_get(a, "history", w), w + ".history", 2)
        if hist.ndim == 2 and hist.shape[1] == STATE_DIM:
            hist = hist.copy()
            hist[:, 4] = wrap_angle(hist[:, 4])
        agents.append(AgentTrack(_int(_get(a, "id", w), w + ".id"), str(_get(a, "kind", w)), hist))
    polylines = []
    for i, m in enumerate(_get(obj, "map", source)):
        w = f"{source}: map[{i}]"
        polylines.append(MapPolyline(_int(_get(m, "id", w), w + ".id"), str(_get(m, "kind", w)),
                                     _array(_get(m, "points", w), w + ".points", 2)))
    future = _get(obj, "future", source)
    if not isinstance(future, dict):
        raise SceneFormatError(f"{source}: future must be an object keyed by target id")
    try:
        gt = {int(k): _array(v, f"{source}: future[{k}]", 2) for k, v in future.items()}
    except ValueError as e:
        if isinstance(e, SceneFormatError):
            raise
        raise SceneFormatError(f"{source}: future keys must be integer ids") from None
    oracle = obj.get("oracle_branches")
    if oracle is not None:
        if not isinstance(oracle, dict):
            raise SceneFormatError(f"{source}: oracle_branches must be an object keyed by target id")
        oracle = {int(k): _array(v, f"{source}: oracle_branches[{k}]", 3) for k, v in oracle.items()}
    choice = obj.get("oracle_choice")
    if choice is not None:
        choice = {int(k): _int(v, f"{source}: oracle_choice[{k}]") for k, v in choice.items()}
    scene = Scene(
        scene_id=str(_get(obj, "scene_id", source)),
        t_obs=_int(_get(obj, "t_obs", source), f"{source}: t_obs"),
        t_hat=_int(_get(obj, "t_hat", source), f"{source}: t_hat"),
        agents=agents,
        map_elements=polylines,
        target_ids=[_int(t, f"{source}: targets") for t in _get(obj, "targets", source)],
        ground_truth=gt,
        oracle_branches=oracle,
        oracle_choice=choice,
        forbidden_pairs=[tuple(p) for p in obj.get("forbidden_pairs", [])],
    )
    return validate_scene(scene)


def loads_scene(text: str, source: str = "<scene>") -> Scene:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{source}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return scene_from_obj(obj, source)


def load_scene(path) -> Scene:
    path = Path(path)
    return loads_scene(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# manifests


def read_manifest(path) -> list[Path]:
    """Scene paths listed in a manifest, resolved against the manifest's directory.

    Lines starting with ``#`` are header/comment lines.
    """
    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(path.parent / line)
    return out


def load_dataset(path) -> list[Scene]:
    return [load_scene(p) for p in read_manifest(path)]


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class FrameTransform:
    """Rigid transform taking world coordinates into a frame at ``origin`` facing ``heading``."""

    origin: Tuple[float, float]
    heading: float

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, -s], [s, c]])

    def points(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return (xy - np.asarray(self.origin)) @ self.rotation

    def vectors(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ self.rotation

    def angles(self, a: np.ndarray) -> np.ndarray:
        return wrap_angle(np.asarray(a) - self.heading)

    def inverse_points(self, xy: np.ndarray) -> np.ndarray:
        return np.asarray(xy, dtype=np.float64) @ self.rotation.T + np.asarray(self.origin)

    def inverse_vectors(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "FrameTransform":
        """The transform that undoes this one."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        ox, oy = self.origin
        # world origin expressed in this frame
        back = (-(ox * c + oy * s), -(-ox * s + oy * c))
        return FrameTransform(back, float(wrap_angle(-self.heading)))


def target_frame(scene: Scene, target: int) -> FrameTransform:
    agent = scene.agent(target)
    return FrameTransform((float(agent.position[0]), float(agent.position[1])), agent.heading)


def transform_scene(scene: Scene, tf: FrameTransform) -> Scene:
    agents = []
    for a in scene.agents:
        h = np.empty_like(a.history)
        h[:, :2] = tf.points(a.history[:, :2])
        h[:, 2:4] = tf.vectors(a.history[:, 2:4])
        h[:, 4] = tf.angles(a.history[:, 4])
        agents.append(AgentTrack(a.id, a.kind, h))
    polylines = [MapPolyline(m.id, m.kind, tf.points(m.points)) for m in scene.map_elements]
    gt = {t: tf.points(v) for t, v in scene.ground_truth.items()}
    oracle = None
    if scene.oracle_branches is not None:
        oracle = {t: tf.points(v) for t, v in scene.oracle_branches.items()}
    return replace(scene, agents=tuple(agents), map_elements=tuple(polylines),
                   ground_truth=gt, oracle_branches=oracle)


def normalize_scene(scene: Scene, target: int) -> Scene:
    """Copy of ``scene`` with ``target``'s last observed pose at the origin, facing +x."""
    try:
        tf = target_frame(scene, target)
    except KeyError:
        raise KeyError(f"unknown target id {target} in scene {scene.scene_id!r}") from None
    return transform_scene(scene, tf)


def iter_targets(scenes: Iterable[Scene]):
    for s in scenes:
        for t in s.target_ids:
            yield s, t
