"""Synthetic rail-vibration benchmark and attention-based anomaly detectors."""
__version__ = "0.1.0"

from .core import Dataset, GenConfig, SignalInstance
from .dataset_io import load, save, split
from .models import AttentionTransformer, AttnTransformerConfig, ScoreConfig, ScoreVariant, anomaly_score, train
from .simulator import generate_dataset, generate_instance

__all__ = [
    "Dataset",
    "GenConfig",
    "SignalInstance",
    "load",
    "save",
    "split",
    "AttentionTransformer",
    "AttnTransformerConfig",
    "ScoreConfig",
    "ScoreVariant",
    "anomaly_score",
    "train",
    "generate_dataset",
    "generate_instance",
]
