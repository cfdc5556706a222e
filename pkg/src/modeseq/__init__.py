"""Sequential mode decoding for multimodal trajectory forecasting."""
from .config import PRESETS, ConfigError, ModelConfig, TrainConfig, build_configs
from .estimator import JointModeSeqForecaster, ModeSeqForecaster
from .metrics import MetricReport, evaluate_joint, evaluate_marginal
from .scene import JointPredictionSet, PredictionSet, Scene, load_dataset

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "JointModeSeqForecaster", "JointPredictionSet", "MetricReport", "ModeSeqForecaster",
    "ModelConfig", "PRESETS", "PredictionSet", "Scene", "TrainConfig", "build_configs", "evaluate_joint",
    "evaluate_marginal", "load_dataset",
]
