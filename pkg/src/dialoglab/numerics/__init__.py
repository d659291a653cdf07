"""Dense tensors, reverse-mode autodiff and gradient checking."""

from dialoglab.numerics import ops
from dialoglab.numerics.gradcheck import grad_check, grad_check_params, numeric_grad
from dialoglab.numerics.module import Embedding, LayerNorm, Linear, Module
from dialoglab.numerics.rng import RngStreams, stream
from dialoglab.numerics.tensor import Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "Embedding",
    "LayerNorm",
    "Linear",
    "Module",
    "RngStreams",
    "Tensor",
    "as_tensor",
    "grad_check",
    "grad_check_params",
    "is_grad_enabled",
    "no_grad",
    "numeric_grad",
    "ops",
    "stream",
]
