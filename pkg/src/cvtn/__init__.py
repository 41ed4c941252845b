"""Two-stage multivariate forecaster: cross-variable attention, then cross-temporal convolution."""

from .model import CvtnModel, ModelConfig
from .tensor import Tensor, backward, no_grad

__all__ = ["CvtnModel", "ModelConfig", "Tensor", "backward", "no_grad"]
__version__ = "0.1.0"
