"""Conditional-convolution generator and feature-pyramid semantics-embedding
discriminator for semantic image synthesis, on a small numpy autodiff engine."""

from .config import Config, load_config
from .tensor import Tensor, backward, no_grad, precision

__all__ = ["Config", "Tensor", "backward", "load_config", "no_grad", "precision"]
__version__ = "0.1.0"
