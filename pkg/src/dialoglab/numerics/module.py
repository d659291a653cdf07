"""Parameter containers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from dialoglab.numerics import ops
from dialoglab.numerics.tensor import Tensor


class Module:
    """Registers parameters and child modules assigned as attributes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


def uniform_param(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


class Linear(Module):
    """``y = x W + b`` with ``W`` of shape [d_in, d_out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        scale = 1.0 / np.sqrt(d_in)
        self.weight = uniform_param(rng, (d_in, d_out), scale)
        self.bias = uniform_param(rng, (d_out,), scale) if bias else None

    def __call__(self, x) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


class Embedding(Module):
    """Rows drawn from N(0, std^2); unit variance by default."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, std: float = 1.0):
        super().__init__()
        self.weight = Tensor(rng.normal(0.0, std, size=(vocab_size, dim)), requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.weight, ids)
