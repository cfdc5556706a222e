"""Model and training configuration, presets, and INI-style config files."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping

VARIANTS = ("recurrent", "parallel", "set")
STRATEGIES = ("wta", "emta")
IGNORED_VARIANTS = ("none", "other_matches", "early_mismatches")
DISTANCE_MODES = ("endpoint", "average")
JOINT_AGGREGATES = ("max_over_agents", "mean_over_agents")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "parallel"
    hidden_dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    n_modes: int = 6
    max_modes: int = 32
    rearrange: bool = True
    share_heads: bool = False
    joint: bool = False
    t_obs: int = 10
    t_hat: int = 30

    def problems(self) -> list[str]:
        out = []
        if self.variant not in VARIANTS:
            out.append(f"model.variant: {self.variant!r} not in {VARIANTS}")
        if self.hidden_dim < 1 or self.n_heads < 1 or self.hidden_dim % self.n_heads:
            out.append(f"model.hidden_dim: {self.hidden_dim} must be a positive multiple of n_heads={self.n_heads}")
        if self.n_layers < 1:
            out.append(f"model.n_layers: must be >= 1, got {self.n_layers}")
        if self.n_modes < 1:
            out.append(f"model.n_modes: must be >= 1, got {self.n_modes}")
        if self.max_modes < self.n_modes:
            out.append(f"model.max_modes: {self.max_modes} < n_modes {self.n_modes}")
        if self.t_obs < 1 or self.t_hat < 1:
            out.append("model.t_obs / model.t_hat: must be >= 1")
        return out


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "emta"
    ignored_variant: str = "none"
    distance_mode: str = "endpoint"
    delta: float = 2.0
    joint_delta: float = 2.0
    joint_aggregate: str = "max_over_agents"
    margin: float = 0.1
    lambda_cls: float = 1.0
    lambda_rank: float = 1.0
    focal_gamma: float = 2.0
    lr: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    grad_clip: float = 5.0
    seed: int = 0
    max_steps: int = 0  # 0 = run all epochs
    init_mean_future: bool = True

    def problems(self) -> list[str]:
        out = []
        if self.strategy not in STRATEGIES:
            out.append(f"train.strategy: {self.strategy!r} not in {STRATEGIES}")
        if self.ignored_variant not in IGNORED_VARIANTS:
            out.append(f"train.ignored_variant: {self.ignored_variant!r} not in {IGNORED_VARIANTS}")
        if self.distance_mode not in DISTANCE_MODES:
            out.append(f"train.distance_mode: {self.distance_mode!r} not in {DISTANCE_MODES}")
        if self.joint_aggregate not in JOINT_AGGREGATES:
            out.append(f"train.joint_aggregate: {self.joint_aggregate!r} not in {JOINT_AGGREGATES}")
        for key in ("delta", "joint_delta", "margin", "lr"):
            if not getattr(self, key) > 0:
                out.append(f"train.{key}: must be > 0, got {getattr(self, key)}")
        for key in ("lambda_cls", "lambda_rank", "weight_decay", "focal_gamma", "grad_clip"):
            if getattr(self, key) < 0:
                out.append(f"train.{key}: must be >= 0, got {getattr(self, key)}")
        if self.epochs < 1 and self.max_steps < 1:
            out.append("train.epochs: must be >= 1 (or set max_steps)")
        if self.batch_size < 1:
            out.append(f"train.batch_size: must be >= 1, got {self.batch_size}")
        return out


PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "desk": {
        "model": {"hidden_dim": 64, "n_layers": 2, "n_modes": 6, "n_heads": 4},
        "train": {"lr": 1e-3, "weight_decay": 0.1, "epochs": 30, "batch_size": 32},
    },
    "paper": {
        "model": {"hidden_dim": 128, "n_layers": 6, "n_modes": 6, "n_heads": 8},
        "train": {"lr": 5e-4, "weight_decay": 0.1, "epochs": 30, "batch_size": 32},
    },
}


def _coerce(cls, key: str, raw: Any, problems: list[str], section: str = ""):
    types = {f.name: f.type for f in fields(cls)}
    default = getattr(cls(), key)
    if isinstance(raw, str):
        try:
            if isinstance(default, bool):
                low = raw.strip().lower()
                if low not in {"1", "0", "true", "false", "on", "off", "yes", "no"}:
                    raise ValueError(raw)
                return low in {"1", "true", "on", "yes"}
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
        except ValueError:
            problems.append(f"{section}{'.' if section else ''}{key}: cannot parse {raw!r} as {types[key]}")
            return default
        return raw
    return raw


def build_configs(preset: str | None = None, sections: Mapping[str, Mapping[str, Any]] | None = None,
                  overrides: Mapping[str, Mapping[str, Any]] | None = None) -> tuple[ModelConfig, TrainConfig]:
    """Resolve preset < config-file sections < explicit overrides into validated configs.

    Raises :class:`ConfigError` listing every unknown key, unparsable value or
    failed constraint at once.
    """
    problems: list[str] = []
    merged: dict[str, dict[str, Any]] = {"model": {}, "train": {}}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"preset: {preset!r} not in {sorted(PRESETS)}"])
        for sec, vals in PRESETS[preset].items():
            merged[sec].update(vals)
    for layer in (sections or {}), (overrides or {}):
        for sec, vals in layer.items():
            if sec not in merged:
                continue
            merged[sec].update({k: v for k, v in vals.items() if v is not None})
    built = []
    for sec, cls in (("model", ModelConfig), ("train", TrainConfig)):
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for k, v in merged[sec].items():
            if k not in names:
                problems.append(f"{sec}.{k}: unknown key")
                continue
            kwargs[k] = _coerce(cls, k, v, problems, sec)
        built.append(cls(**kwargs))
    model_cfg, train_cfg = built
    problems += model_cfg.problems() + train_cfg.problems()
    if problems:
        raise ConfigError(problems)
    return model_cfg, train_cfg


def read_config_file(path) -> dict[str, dict[str, str]]:
    """Sections of an INI file (``[model]``, ``[train]``, ``[data]``...) as plain dicts."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def config_snapshot(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict[str, dict[str, Any]]:
    return {"model": asdict(model_cfg), "train": asdict(train_cfg)}


def with_overrides(cfg, **kwargs):
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
