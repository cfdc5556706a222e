"""Synthetic junction scenes with known multimodal structure.

A fork scene has one target driving along an approach lane towards a junction
that splits into ``B`` branch centerlines. Its ground-truth future follows one
branch, drawn from ``branch_probs``, plus smooth bounded noise; all noiseless
branch futures are kept as the scene's oracle.

An interactive scene has two targets approaching a shared conflict zone from
perpendicular directions. Branch 0 of each target is a stop before the zone
(yield); branches 1..B-1 drive through it. Under ``yield_or_proceed`` the joint
sample never lets both targets drive through.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .scene import AgentTrack, FrameTransform, MapPolyline, Scene, dumps_scene, validate_scene, wrap_angle

GENERATOR_VERSION = "modeseq-synthgen/1"
MIN_BRANCH_SEPARATION = 4.0  # meters between distinct oracle endpoints
COUPLINGS = ("yield_or_proceed", "independent")
_POLY_POINTS = 12


@dataclass(frozen=True)
class ForkSpec:
    branch_count: int = 3
    branch_probs: Sequence[float] = (0.5, 0.3, 0.2)
    branch_angles: Sequence[float] = (math.pi / 4, 0.0, -math.pi / 4)
    approach_speed: float = 10.0
    waypoint_noise_sigma: float = 0.05
    seed: int = 0
    t_obs: int = 10
    t_hat: int = 30
    dt: float = 0.1
    junction_range: tuple = (8.0, 14.0)  # distance to the junction, meters
    max_background: int = 3

    def __post_init__(self):
        object.__setattr__(self, "branch_probs", tuple(float(p) for p in self.branch_probs))
        object.__setattr__(self, "branch_angles", tuple(float(a) for a in self.branch_angles))
        object.__setattr__(self, "junction_range", tuple(float(x) for x in self.junction_range))
        b = self.branch_count
        if not 1 <= b <= 8:
            raise ValueError(f"branch_count must be in [1, 8], got {b}")
        p = np.asarray(self.branch_probs)
        if p.shape != (b,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"branch_probs must be a simplex of length {b}, got {self.branch_probs}")
        if len(self.branch_angles) != b:
            raise ValueError(f"branch_angles must have length {b}")
        if self.approach_speed <= 0 or self.waypoint_noise_sigma < 0:
            raise ValueError("approach_speed must be > 0 and waypoint_noise_sigma >= 0")
        if self.t_obs < 2 or self.t_hat < 2 or self.dt <= 0:
            raise ValueError("t_obs, t_hat must be >= 2 and dt > 0")
        lo, hi = self.junction_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid junction_range {self.junction_range}")

    def spec_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS = {
    "fork1": ForkSpec(branch_count=1, branch_probs=(1.0,), branch_angles=(0.0,)),
    "fork2": ForkSpec(branch_count=2, branch_probs=(0.6, 0.4), branch_angles=(math.pi / 4, -math.pi / 4)),
    "fork3": ForkSpec(),
    "interactive": ForkSpec(branch_count=2, branch_probs=(0.5, 0.5), branch_angles=(0.0, 0.0)),
}
PRESET_COUPLING = {"interactive": "yield_or_proceed"}


def derive_seed(seed: int, index: int) -> int:
    """Per-scene 64-bit seed from a dataset seed and the scene index."""
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# geometry helpers (local frame: target at the origin facing +x at t = 0)


def _branch_path(s: np.ndarray, junction: float, arc_len: float, angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Positions and headings at arc lengths ``s`` along a straight-then-arc path."""
    s = np.asarray(s, dtype=np.float64)
    u = np.clip(s - junction, 0.0, None)
    kappa = angle / arc_len if arc_len > 0 else 0.0
    if abs(kappa) < 1e-12:
        x = np.where(s <= junction, s, junction + u)
        y = np.zeros_like(s)
    else:
        x = np.where(s <= junction, s, junction + np.sin(kappa * u) / kappa)
        y = np.where(s <= junction, 0.0, (1.0 - np.cos(kappa * u)) / kappa)
    heading = kappa * u
    return np.stack([x, y], axis=-1), heading


def _stop_path(t: np.ndarray, speed: float, stop_at: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant deceleration from ``speed`` to rest at distance ``stop_at``."""
    decel = speed * speed / (2.0 * stop_at)
    t_stop = speed / decel
    tc = np.minimum(t, t_stop)
    s = speed * tc - 0.5 * decel * tc * tc
    return np.stack([s, np.zeros_like(s)], axis=-1), np.zeros_like(s)


def _add_noise(path: np.ndarray, heading: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth random-walk offset, increments capped at ``sigma``, in the path's local frame."""
    if sigma == 0:
        return path.copy()
    steps = np.clip(rng.normal(0.0, sigma, size=path.shape), -sigma, sigma)
    offset = np.cumsum(steps, axis=0)  # (longitudinal, lateral)
    c, s = np.cos(heading), np.sin(heading)
    dx = offset[:, 0] * c - offset[:, 1] * s
    dy = offset[:, 0] * s + offset[:, 1] * c
    return path + np.stack([dx, dy], axis=-1)


def _history(speed: float, t_obs: int, dt: float, heading: float = 0.0, origin=(0.0, 0.0)) -> np.ndarray:
    t = np.arange(-(t_obs - 1), 1) * dt
    d = np.array([math.cos(heading), math.sin(heading)])
    pos = np.asarray(origin) + np.outer(speed * t, d)
    vel = np.broadcast_to(speed * d, pos.shape)
    return np.column_stack([pos, vel, np.full(t_obs, wrap_angle(heading))])


def _polyline(start, end, n: int = _POLY_POINTS) -> np.ndarray:
    return np.linspace(np.asarray(start, float), np.asarray(end, float), n)


def _min_endpoint_gap(branches: np.ndarray) -> float:
    ends = branches[:, -1]
    if len(ends) < 2:
        return math.inf
    d = np.linalg.norm(ends[:, None] - ends[None], axis=-1)
    return float(d[np.triu_indices(len(ends), 1)].min())


def _background(rng: np.random.Generator, spec: ForkSpec, first_agent_id: int, first_map_id: int,
                lateral_base: float, lane_end: float) -> tuple[list[AgentTrack], list[MapPolyline]]:
    """0..max_background vehicles on parallel lanes beside the approach, driving away from the junction."""
    n = int(rng.integers(0, spec.max_background + 1))
    agents, lanes = [], []
    for i in range(n):
        y = lateral_base - 4.0 * i
        x0 = rng.uniform(-25.0, lane_end - 3.0)
        speed = rng.uniform(4.0, 12.0)
        hist = _history(speed, spec.t_obs, spec.dt, heading=math.pi, origin=(x0, y))
        agents.append(AgentTrack(first_agent_id + i, "vehicle", hist))
        lanes.append(MapPolyline(first_map_id + i, "lane", _polyline((lane_end, y), (-60.0, y))))
    return agents, lanes


def _to_world(rng: np.random.Generator):
    heading = float(rng.uniform(-math.pi, math.pi))
    origin = tuple(rng.uniform(-100.0, 100.0, size=2))
    # FrameTransform maps world -> local; its inverse places the local layout in the world
    return FrameTransform(origin, heading).inverse()


def _place(tf: FrameTransform, agents, polylines, gt, oracle):
    moved = []
    for a in agents:
        h = np.empty_like(a.history)
        h[:, :2] = tf.points(a.history[:, :2])
        h[:, 2:4] = tf.vectors(a.history[:, 2:4])
        h[:, 4] = tf.angles(a.history[:, 4])
        moved.append(AgentTrack(a.id, a.kind, h))
    polys = [MapPolyline(m.id, m.kind, tf.points(m.points)) for m in polylines]
    gt = {k: tf.points(v) for k, v in gt.items()}
    oracle = {k: tf.points(v) for k, v in oracle.items()}
    return moved, polys, gt, oracle


# ---------------------------------------------------------------------------
# generators


def fork_branches(spec: ForkSpec, junction: float) -> np.ndarray:
    """Noiseless branch futures [B, T_hat, 2] in the target's local frame."""
    s = spec.approach_speed * spec.dt * np.arange(1, spec.t_hat + 1)
    arc_len = max(s[-1] - junction, 1e-6)
    return np.stack([_branch_path(s, junction, arc_len, a)[0] for a in spec.branch_angles])


def generate_fork_scene(spec: ForkSpec, scene_id: Optional[str] = None) -> Scene:
    """One single-target fork scene, deterministic in ``spec`` (including its seed)."""
    rng = np.random.default_rng(spec.seed)
    junction = float(rng.uniform(*spec.junction_range))
    s = spec.approach_speed * spec.dt * np.arange(1, spec.t_hat + 1)
    arc_len = max(s[-1] - junction, 1e-6)
    paths = [_branch_path(s, junction, arc_len, a) for a in spec.branch_angles]
    branches = np.stack([p for p, _ in paths])
    if _min_endpoint_gap(branches) <= MIN_BRANCH_SEPARATION:
        raise ValueError(f"branch endpoints closer than {MIN_BRANCH_SEPARATION} m; widen branch_angles")
    choice = int(rng.choice(spec.branch_count, p=np.asarray(spec.branch_probs)))
    future = _add_noise(branches[choice], paths[choice][1], spec.waypoint_noise_sigma, rng)

    target = AgentTrack(0, "vehicle", _history(spec.approach_speed, spec.t_obs, spec.dt))
    polylines = [MapPolyline(0, "lane", _polyline((-30.0, 0.0), (junction, 0.0))),
                 MapPolyline(1, "boundary", _polyline((-30.0, 3.5), (junction, 3.5))),
                 MapPolyline(2, "boundary", _polyline((-30.0, -3.5), (junction, -3.5)))]
    s_map = np.linspace(junction, s[-1] + 10.0, _POLY_POINTS)
    for b, ang in enumerate(spec.branch_angles):
        pts = _branch_path(s_map, junction, arc_len, ang)[0]
        polylines.append(MapPolyline(3 + b, "branch", pts))
    bg_agents, bg_lanes = _background(rng, spec, 1, 3 + spec.branch_count, -7.0, junction)

    tf = _to_world(rng)
    agents, polylines, gt, oracle = _place(tf, [target] + bg_agents, polylines + bg_lanes,
                                           {0: future}, {0: branches})
    scene = Scene(scene_id=scene_id or f"fork-{spec.seed:016x}", t_obs=spec.t_obs, t_hat=spec.t_hat,
                  agents=agents, map_elements=polylines, target_ids=(0,), ground_truth=gt,
                  oracle_branches=oracle, oracle_choice={0: choice})
    return validate_scene(scene)


def joint_branch_probs(spec: ForkSpec, coupling: str) -> np.ndarray:
    """[B, B] probability table over (first target branch, second target branch)."""
    p = np.asarray(spec.branch_probs)
    table = np.outer(p, p)
    if coupling == "yield_or_proceed":
        table[1:, 1:] = 0.0
        if table.sum() <= 0:
            raise ValueError("yield_or_proceed needs positive probability on the yield branch")
        table /= table.sum()
    elif coupling != "independent":
        raise ValueError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")
    return table


def forbidden_pairs(spec: ForkSpec, coupling: str) -> tuple[tuple[int, int], ...]:
    if coupling != "yield_or_proceed":
        return ()
    b = spec.branch_count
    return tuple((i, j) for i in range(1, b) for j in range(1, b))


def _interactive_branches(spec: ForkSpec, junction: float) -> tuple[np.ndarray, np.ndarray]:
    """Branch futures and headings for one interactive agent in its own local frame."""
    t = spec.dt * np.arange(1, spec.t_hat + 1)
    s = spec.approach_speed * t
    arc_len = max(s[-1] - junction, 1e-6)
    paths = [_stop_path(t, spec.approach_speed, junction - 4.0)]
    for ang in spec.branch_angles[1:]:
        paths.append(_branch_path(s, junction, arc_len, ang))
    return np.stack([p for p, _ in paths]), np.stack([h for _, h in paths])


def generate_interactive_scene(spec: ForkSpec, coupling: str = "yield_or_proceed",
                               scene_id: Optional[str] = None) -> Scene:
    """Two targets meeting at a conflict zone, joint future drawn per ``coupling``."""
    if spec.branch_count < 2:
        raise ValueError("interactive scenes need branch_count >= 2 (yield plus at least one proceed)")
    table = joint_branch_probs(spec, coupling)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.junction_range
    lo = max(lo, 8.0)
    poses = []  # (origin, heading) of each target's local frame inside the scene's layout frame
    junctions = []
    for a, heading in enumerate((0.0, math.pi / 2)):
        j = float(rng.uniform(lo, max(hi, lo)))
        d = np.array([math.cos(heading), math.sin(heading)])
        poses.append((-j * d, heading))  # conflict point at the layout origin
        junctions.append(j)
    flat = rng.choice(table.size, p=table.reshape(-1))
    choice = divmod(int(flat), spec.branch_count)

    agents, polylines, gt, oracle = [], [], {}, {}
    for a, ((origin, heading), j) in enumerate(zip(poses, junctions)):
        branches, headings = _interactive_branches(spec, j)
        if _min_endpoint_gap(branches) <= MIN_BRANCH_SEPARATION:
            raise ValueError("interactive branch endpoints closer than the separation margin")
        local_to_layout = FrameTransform(tuple(origin), heading).inverse()
        c = choice[a]
        fut = _add_noise(branches[c], headings[c], spec.waypoint_noise_sigma, rng)
        agents.append(AgentTrack(a, "vehicle", _history(spec.approach_speed, spec.t_obs, spec.dt,
                                                        heading=heading, origin=origin)))
        gt[a] = local_to_layout.points(fut)
        oracle[a] = local_to_layout.points(branches)
        base = 10 * a
        lane = _polyline((-30.0, 0.0), (j + 20.0, 0.0))
        polylines.append(MapPolyline(base, "lane", local_to_layout.points(lane)))
        stop = _polyline((j - 4.0, -2.0), (j - 4.0, 2.0), 4)
        polylines.append(MapPolyline(base + 1, "boundary", local_to_layout.points(stop)))
        for b, ang in enumerate(spec.branch_angles[1:]):
            if abs(ang) > 1e-12:
                s_map = np.linspace(j, j + 25.0, _POLY_POINTS)
                pts = _branch_path(s_map, j, 25.0, ang)[0]
                polylines.append(MapPolyline(base + 2 + b, "branch", local_to_layout.points(pts)))
    # layout frame: agent 0 drives +x along y = 0 from x = -j0; keep extra traffic south-west
    bg_agents, bg_lanes = _background(rng, replace(spec, max_background=min(spec.max_background, 2)),
                                      2, 100, -7.0, -junctions[0] - 2.0)
    tf = _to_world(rng)
    agents, polylines, gt, oracle = _place(tf, agents + bg_agents, polylines + bg_lanes, gt, oracle)
    scene = Scene(scene_id=scene_id or f"inter-{spec.seed:016x}", t_obs=spec.t_obs, t_hat=spec.t_hat,
                  agents=agents, map_elements=polylines, target_ids=(0, 1), ground_truth=gt,
                  oracle_branches=oracle, oracle_choice={0: choice[0], 1: choice[1]},
                  forbidden_pairs=forbidden_pairs(spec, coupling))
    return validate_scene(scene)


def generate_scenes(spec: ForkSpec, n: int, seed: int, coupling: Optional[str] = None) -> list[Scene]:
    """``n`` scenes in memory, scene ``i`` seeded from ``(seed, i)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = []
    for i in range(n):
        sub = replace(spec, seed=derive_seed(seed, i))
        sid = f"{'inter' if coupling else 'fork'}-{seed}-{i:05d}"
        if coupling:
            out.append(generate_interactive_scene(sub, coupling, scene_id=sid))
        else:
            out.append(generate_fork_scene(sub, scene_id=sid))
    return out


def generate_dataset(spec: ForkSpec, n: int, seed: int, out_dir, coupling: Optional[str] = None) -> Path:
    """Write ``n`` scene files plus ``manifest.txt`` under ``out_dir``; returns the manifest path.

    The manifest header carries the generator version and spec hash; the rest
    lists scene paths relative to the manifest.
    """
    out_dir = Path(out_dir)
    (out_dir / "scenes").mkdir(parents=True, exist_ok=True)
    rel = []
    for i, scene in enumerate(generate_scenes(spec, n, seed, coupling)):
        name = f"scenes/scene_{i:05d}.json"
        path = out_dir / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(dumps_scene(scene))
        os.replace(tmp, path)
        rel.append(name)
    header = (f"# {GENERATOR_VERSION} spec={spec.spec_hash()} n={n} seed={seed} "
              f"coupling={coupling or 'none'}")
    manifest = out_dir / "manifest.txt"
    tmp = manifest.with_name("manifest.txt.tmp")
    tmp.write_text("\n".join([header] + rel) + "\n")
    os.replace(tmp, manifest)
    return manifest


def dataset_hash(manifest) -> str:
    """SHA-256 over the manifest and every scene file it lists, in order."""
    from .scene import read_manifest

    h = hashlib.sha256(Path(manifest).read_bytes())
    for p in read_manifest(manifest):
        h.update(p.read_bytes())
    return h.hexdigest()
