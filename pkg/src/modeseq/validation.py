"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence, Union

from .config import VARIANTS
from .scene import Scene, SceneValidationError, load_dataset, validate_scene

SceneInput = Union[str, Path, Scene, Iterable[Scene]]


def check_scenes(X: SceneInput, require_ground_truth: bool = True, n_targets: int | None = None,
                 t_obs: int | None = None, t_hat: int | None = None) -> list[Scene]:
    """Coerce ``X`` (scenes, one scene, or a manifest path) into a validated list.

    Raises ``ValueError`` naming the first offending scene when the list is
    empty, an element is not a Scene, a scene fails validation, or scenes
    disagree with the requested target count or horizons.
    """
    if isinstance(X, (str, Path)):
        scenes = load_dataset(X)
    elif isinstance(X, Scene):
        scenes = [X]
    else:
        scenes = list(X)
    if not scenes:
        raise ValueError("expected at least one scene, got an empty collection")
    for i, s in enumerate(scenes):
        if not isinstance(s, Scene):
            raise ValueError(f"element {i} is {type(s).__name__}, expected Scene")
        try:
            validate_scene(s)
        except SceneValidationError as exc:
            raise ValueError(f"scene {s.scene_id!r}: {exc}") from exc
        if require_ground_truth and any(t not in s.ground_truth for t in s.target_ids):
            raise ValueError(f"scene {s.scene_id!r}: ground truth missing for a target")
        if n_targets is not None and len(s.target_ids) != n_targets:
            raise ValueError(f"scene {s.scene_id!r}: {len(s.target_ids)} targets, model expects {n_targets}")
        if t_obs is not None and s.t_obs != t_obs:
            raise ValueError(f"scene {s.scene_id!r}: t_obs {s.t_obs} != model t_obs {t_obs}")
        if t_hat is not None and require_ground_truth and s.t_hat != t_hat:
            raise ValueError(f"scene {s.scene_id!r}: t_hat {s.t_hat} != model t_hat {t_hat}")
    return scenes


def check_n_modes(n_modes: int | None, default: int, max_modes: int) -> int:
    k = default if n_modes is None else int(n_modes)
    if not 1 <= k <= max_modes:
        raise ValueError(f"n_modes must lie in [1, {max_modes}], got {k}")
    return k


def check_variant(variant: str | None, default: str) -> str:
    v = default if variant is None else variant
    if v not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {v!r}")
    return v


def unique_ids(scenes: Sequence[Scene]) -> None:
    ids = [s.scene_id for s in scenes]
    if len(set(ids)) != len(ids):
        raise ValueError("scene ids must be unique")
