"""Monaural speech separation with an unknown number of speakers."""

from .model import PRESETS, ModelConfig, Separator, preset
from .decoder import separate

__all__ = ["PRESETS", "ModelConfig", "Separator", "preset", "separate"]
__version__ = "0.1.0"
