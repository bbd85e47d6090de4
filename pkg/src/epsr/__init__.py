"""Edge-profile single-image super-resolution engine."""

__version__ = "0.1.0"

from .tensor import Tensor, GradTape, backward  # noqa: F401
