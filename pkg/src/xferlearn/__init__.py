"""Joint domain-adversarial and semantic transfer learning, desk scale.

A self-contained training framework: an autodiff tensor core, declarative
convolutional networks with activation taps, a multi-layer domain
discriminator, entropy-based semantic transfer losses, Adam, data
pipeline, and CLI experiment orchestration.
"""

from .tensor import Tensor, backward, grad_check, use_float64

__all__ = ["Tensor", "backward", "grad_check", "use_float64"]
__version__ = "0.1.0"
