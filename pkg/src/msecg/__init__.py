"""Mamba-based super-resolution for 12-lead ECG (50 Hz -> 500 Hz)."""

from .dsp import Signal
from .model import MSECG, ModelConfig, count_params, msecg_forward
from .train import TrainConfig, train

__all__ = ["Signal", "MSECG", "ModelConfig", "count_params", "msecg_forward", "TrainConfig", "train"]
__version__ = "0.1.0"
