"""Small neural-net building blocks on top of the autodiff tensors."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; variance-preserving."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Matrix:
    """A bias-free learned matrix, applied as x @ W."""

    def __init__(self, rng, n_in: int, n_out: int, name: str):
        self.W = Parameter(uniform_init(rng, n_in, (n_in, n_out)), name=name)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W

    def named_parameters(self):
        return [(self.W.name, self.W)]


class Linear:
    def __init__(self, rng, n_in: int, n_out: int, name: str):
        self.W = Parameter(uniform_init(rng, n_in, (n_in, n_out)), name=f"{name}.W")
        self.b = Parameter(np.zeros(n_out), name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b

    def named_parameters(self):
        return [(self.W.name, self.W), (self.b.name, self.b)]


class MLP:
    """Two-layer perceptron with relu hidden activation."""

    def __init__(self, rng, n_in: int, n_hidden: int, n_out: int, name: str):
        self.lin1 = Linear(rng, n_in, n_hidden, f"{name}.lin1")
        self.lin2 = Linear(rng, n_hidden, n_out, f"{name}.lin2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.relu(self.lin1(x)))

    def named_parameters(self):
        return self.lin1.named_parameters() + self.lin2.named_parameters()


def collect_parameters(modules) -> list[tuple[str, Parameter]]:
    named = []
    for m in modules:
        named.extend(m.named_parameters())
    return named
