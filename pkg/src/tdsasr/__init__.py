"""Time-depth separable convolutional seq2seq ASR with LM-fused beam search."""

__version__ = "0.1.0"

from .rng import Rng
from .tensor import Tensor, no_grad

__all__ = ["Rng", "Tensor", "no_grad", "__version__"]
