"""Hyperspectral Siamese tracking at desk scale.

Dual patch tokenisation of false-colour and hyperspectral crops, a learned
per-token fusion gate, RGB-to-B-band embedding inflation, zero-padded
cross-modality training and an OTB-style evaluation harness, all on a small
numpy autodiff core.
"""
__version__ = "0.1.0"

from .model import ModelConfig, TrackerModel, TrainConfig
from .tracking import Tracker

__all__ = ["ModelConfig", "TrackerModel", "TrainConfig", "Tracker", "__version__"]
