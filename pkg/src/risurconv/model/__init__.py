"""Classification network, synthetic data, training and evaluation protocols."""

from .config import ClassifierConfig, ConfigError, LayerSpec, TrainConfig, config_hash, paper_preset, toy_preset
from .data import CLASSES, synth_dataset
from .network import (
    CloudGeometry,
    DegenerateCloudError,
    RISurConvClassifier,
    batch_geometry,
    build_classifier,
    cloud_geometry,
    forward_classify,
    predict_logits,
)
from .train import ablation_sweep, accuracy, evaluate_protocol, protocol_sweep, train

__all__ = [
    "CLASSES", "ClassifierConfig", "CloudGeometry", "ConfigError", "DegenerateCloudError", "LayerSpec",
    "RISurConvClassifier", "TrainConfig", "ablation_sweep", "accuracy", "batch_geometry", "build_classifier",
    "cloud_geometry", "config_hash", "evaluate_protocol", "forward_classify", "paper_preset",
    "predict_logits", "protocol_sweep", "synth_dataset", "toy_preset", "train",
]
