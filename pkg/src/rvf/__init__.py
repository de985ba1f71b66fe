"""Covariance-based attention for real-world video super-resolution, on a small numpy autodiff engine."""
from .tensor import DimensionError, Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "DimensionError", "no_grad", "__version__"]
