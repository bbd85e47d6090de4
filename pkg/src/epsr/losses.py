"""Training losses: mean absolute error plus a Sobel-gradient term."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .imaging import sobel_gradients
from .tensor import Tensor

# Weight of the gradient term in the total objective.
GRADIENT_WEIGHT = 0.1


@dataclass(frozen=True)
class LossReport:
    """Scalar loss values for one step; total == l1 + 0.1*gradient exactly."""

    l1: float
    gradient: float
    total: float
    total_tensor: Tensor = field(repr=False, compare=False)


def l1_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute difference over all elements, graph-attached."""
    return T.mean_all(T.absolute(T.subtract(sr, hr)))


def gradient_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """L1 distance between Sobel responses of the two images."""
    return l1_loss(sobel_gradients(sr), sobel_gradients(hr))


def total_loss(sr: Tensor, hr: Tensor) -> LossReport:
    """Combined objective with the graph-attached total for backprop.

    The reported ``total`` is recomputed from the reported components in
    float64 so the decomposition identity holds exactly; the tensor total
    carries the same value at working precision.
    """
    l1_t = l1_loss(sr, hr)
    grad_t = gradient_loss(sr, hr)
    weight = T.tensor(GRADIENT_WEIGHT, dtype=sr.data.dtype)
    total_t = T.add(l1_t, T.mul(grad_t, weight))
    l1_v = l1_t.item()
    grad_v = grad_t.item()
    return LossReport(l1=l1_v, gradient=grad_v,
                      total=l1_v + GRADIENT_WEIGHT * grad_v,
                      total_tensor=total_t)
