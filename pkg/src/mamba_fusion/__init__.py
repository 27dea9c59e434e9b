"""Text-enhanced bidirectional-scan multimodal fusion with a
missing-modality robustness harness, built on an in-package reverse-mode
autodiff substrate."""

from .autodiff import Parameter, Tape, Tensor, backward, finite_difference_check
from .model import ModelConfig, PRESETS, TextFusionModel, build_model

__all__ = [
    "Parameter", "Tape", "Tensor", "backward", "finite_difference_check",
    "ModelConfig", "PRESETS", "TextFusionModel", "build_model",
]

__version__ = "0.1.0"
