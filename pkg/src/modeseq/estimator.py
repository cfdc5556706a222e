"""Scikit-learn style forecasters wrapping the network, training loop and metrics."""
from __future__ import annotations

from dataclasses import fields
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import PRESETS, ModelConfig, TrainConfig, build_configs
from .decoder import LayerOutput
from .features import Sample, featurize, joint_samples, marginal_samples
from .metrics import evaluate_joint, evaluate_marginal
from .network import ModeSeqNetwork
from .numcore import no_grad
from .scene import JointPredictionSet, PredictionSet
from .training import load_checkpoint, save_checkpoint, train_network
from .validation import check_n_modes, check_scenes, check_variant, unique_ids

_MODEL_KEYS = ("variant", "hidden_dim", "n_heads", "n_layers", "n_modes", "max_modes", "rearrange",
               "share_heads")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


class ModeSeqForecaster(BaseEstimator):
    """Marginal multimodal trajectory forecaster.

    ``fit`` takes scenes (or a manifest path) whose ground-truth futures are
    stored inside each scene, so ``y`` is unused. ``predict`` returns one
    :class:`PredictionSet` per (scene, target) pair in world coordinates.

    Examples
    --------
    >>> model = ModeSeqForecaster(epochs=5).fit(train_scenes)      # doctest: +SKIP
    >>> preds = model.predict(val_scenes, n_modes=12)               # doctest: +SKIP
    """

    _joint = False

    def __init__(self, variant: str = "parallel", hidden_dim: int = 64, n_heads: int = 4,
                 n_layers: int = 2, n_modes: int = 6, max_modes: int = 32, rearrange: bool = True,
                 share_heads: bool = False, strategy: str = "emta", ignored_variant: str = "none",
                 distance_mode: str = "endpoint", delta: float = 2.0, joint_delta: float = 2.0,
                 joint_aggregate: str = "max_over_agents", margin: float = 0.1,
                 lambda_cls: float = 1.0, lambda_rank: float = 1.0, focal_gamma: float = 2.0,
                 lr: float = 1e-3, weight_decay: float = 0.1, beta1: float = 0.9,
                 beta2: float = 0.999, adam_eps: float = 1e-8, epochs: int = 30,
                 batch_size: int = 32, grad_clip: float = 5.0, max_steps: int = 0,
                 init_mean_future: bool = True, random_state: int = 0):
        self.variant = variant
        self.hidden_dim = hidden_dim
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.n_modes = n_modes
        self.max_modes = max_modes
        self.rearrange = rearrange
        self.share_heads = share_heads
        self.strategy = strategy
        self.ignored_variant = ignored_variant
        self.distance_mode = distance_mode
        self.delta = delta
        self.joint_delta = joint_delta
        self.joint_aggregate = joint_aggregate
        self.margin = margin
        self.lambda_cls = lambda_cls
        self.lambda_rank = lambda_rank
        self.focal_gamma = focal_gamma
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.epochs = epochs
        self.batch_size = batch_size
        self.grad_clip = grad_clip
        self.max_steps = max_steps
        self.init_mean_future = init_mean_future
        self.random_state = random_state

    @classmethod
    def from_preset(cls, name: str, **overrides):
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        params = {**PRESETS[name]["model"], **PRESETS[name]["train"], **overrides}
        return cls(**params)

    # configuration

    def _configs(self, t_obs: int, t_hat: int) -> tuple[ModelConfig, TrainConfig]:
        params = self.get_params()
        model = {k: params[k] for k in _MODEL_KEYS}
        model.update(joint=self._joint, t_obs=t_obs, t_hat=t_hat)
        train = {k: params[k] for k in _TRAIN_KEYS}
        train["seed"] = int(params["random_state"])
        return build_configs(sections={"model": model, "train": train})

    def _samples(self, scenes) -> list[Sample]:
        return joint_samples(scenes) if self._joint else marginal_samples(scenes)

    def _check_input(self, X, require_ground_truth: bool):
        fitted = hasattr(self, "model_config_")
        scenes = check_scenes(X, require_ground_truth,
                              n_targets=getattr(self, "n_targets_", None) if self._joint else None,
                              t_obs=self.model_config_.t_obs if fitted else None,
                              t_hat=self.model_config_.t_hat if fitted else None)
        unique_ids(scenes)
        if self._joint and len({len(s.target_ids) for s in scenes}) != 1:
            raise ValueError("joint forecasting needs the same number of targets in every scene")
        return scenes

    # fitting

    def fit(self, X, y=None, log_path=None, checkpoint_path=None):
        scenes = self._check_input(X, require_ground_truth=True)
        model_cfg, train_cfg = self._configs(scenes[0].t_obs, scenes[0].t_hat)
        result = train_network(self._samples(scenes), model_cfg, train_cfg, log_path=log_path,
                               checkpoint_path=checkpoint_path)
        self.model_config_ = model_cfg
        self.train_config_ = train_cfg
        self.network_ = result.network
        self.history_ = result.history
        self.n_train_samples_ = len(self._samples(scenes))
        if self._joint:
            self.n_targets_ = len(scenes[0].target_ids)
        return self

    # inference

    def _forward(self, X, n_modes, variant, rearrange, chunk: int = 64):
        check_is_fitted(self, "network_")
        scenes = self._check_input(X, require_ground_truth=False)
        cfg = self.model_config_
        k = check_n_modes(n_modes, cfg.n_modes, cfg.max_modes)
        v = check_variant(variant, cfg.variant)
        r = cfg.rearrange if rearrange is None else bool(rearrange)
        samples = self._samples(scenes)
        per_layer: list[list] = [[] for _ in range(cfg.n_layers)]
        with no_grad():
            for start in range(0, len(samples), chunk):
                batch = featurize(samples[start:start + chunk], with_gt=False)
                outs = self.network_(batch, k, v, r)
                for ell, out in enumerate(outs):
                    per_layer[ell] += self._to_predictions(batch, out)
        return per_layer

    def _to_predictions(self, batch, out: LayerOutput) -> list:
        loc, sc, scores = out.loc.data, out.scale.data, out.scores.data
        preds = []
        for i, (smp, frame) in enumerate(zip(batch.samples, batch.frames)):
            world = frame.inverse_points(loc[i])
            conf = np.clip(scores[i], 0.0, 1.0)
            if self._joint:
                kinds = tuple(smp.scene.agent(t).kind for t in smp.targets)
                preds.append(JointPredictionSet(smp.targets, np.swapaxes(world, 0, 1),
                                                np.swapaxes(sc[i], 0, 1), conf,
                                                scene_id=smp.scene.scene_id, kinds=kinds))
            else:
                t = smp.targets[0]
                preds.append(PredictionSet(world[0], sc[i, 0], conf, scene_id=smp.scene.scene_id,
                                           target_id=t, kind=smp.scene.agent(t).kind))
        return preds

    def predict(self, X, n_modes: Optional[int] = None, variant: Optional[str] = None,
                rearrange: Optional[bool] = None) -> list:
        """Final-layer predictions; ``n_modes`` above the trained count extrapolates."""
        return self._forward(X, n_modes, variant, rearrange)[-1]

    def predict_layers(self, X, n_modes: Optional[int] = None, variant: Optional[str] = None,
                       rearrange: Optional[bool] = None) -> list[list]:
        """Predictions of every decoding layer, first layer first."""
        return self._forward(X, n_modes, variant, rearrange)

    def evaluate(self, X, n_modes: Optional[int] = None, variant: Optional[str] = None,
                 threshold: float = 2.0, layers: bool = False, miss_rule: str = "any"):
        """MetricReport of the final layer, or a list with one report per layer.

        ``miss_rule`` ("any" or "all" agents missing) only affects joint models.
        """
        scenes = self._check_input(X, require_ground_truth=True)
        per_layer = self._forward(scenes, n_modes, variant, None)
        if self._joint:
            reports = [evaluate_joint(preds, scenes, threshold, miss_rule) for preds in per_layer]
        else:
            reports = [evaluate_marginal(preds, scenes, threshold) for preds in per_layer]
        return reports if layers else reports[-1]

    def score(self, X, y=None) -> float:
        """Mean average precision of the final layer (joint mAP for joint models)."""
        report = self.evaluate(X)
        return report.joint_mAP if self._joint else report.mAP

    # persistence

    def save(self, path):
        check_is_fitted(self, "network_")
        return save_checkpoint(path, self.network_, self.model_config_, self.train_config_,
                               step=len(getattr(self, "history_", [])))

    @classmethod
    def load(cls, path):
        ckpt = load_checkpoint(path)
        if ckpt.model_config.joint != cls._joint:
            kind = "joint" if ckpt.model_config.joint else "marginal"
            raise ValueError(f"{path}: checkpoint holds a {kind} model")
        return cls.from_checkpoint(ckpt)

    @classmethod
    def from_checkpoint(cls, ckpt):
        m, t = ckpt.model_config, ckpt.train_config
        params = {k: getattr(m, k) for k in _MODEL_KEYS}
        params.update({k: getattr(t, k) for k in _TRAIN_KEYS})
        est = cls(random_state=t.seed, **params)
        est.model_config_ = m
        est.train_config_ = t
        est.network_ = ckpt.network
        est.history_ = []
        return est

    @classmethod
    def from_network(cls, network: ModeSeqNetwork, train_cfg: TrainConfig):
        from .training import Checkpoint
        return cls.from_checkpoint(Checkpoint(network, network.cfg, train_cfg, 0, {}, {}))


class JointModeSeqForecaster(ModeSeqForecaster):
    """Joint forecaster: one :class:`JointPredictionSet` per scene, ranked by scene scores."""

    _joint = True
