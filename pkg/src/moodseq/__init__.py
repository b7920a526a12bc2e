"""Multimodal depression-severity sequence models built on a small numpy
autodiff engine."""
from .models import (build_audio_model, build_fused_model, build_text_model, phq_to_label)
from .tensor import Tensor, no_grad, precision

__all__ = ["Tensor", "no_grad", "precision", "build_audio_model", "build_text_model",
           "build_fused_model", "phq_to_label"]
__version__ = "0.1.0"
