"""Minimal module system: parameter registration, dense layers, MLP stacks."""
from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from .tensor import Parameter, Tensor, activation as apply_activation, linear


class Module:
    """Base class; parameters and sub-modules are discovered from attributes.

    Attribute order is insertion order, so parameter names and the order
    of ``parameters()`` are stable across runs.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_fan_in(rng: np.random.Generator, out_dim: int, in_dim: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / math.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=(out_dim,))
    return w, b


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, act: str = "identity"):
        w, b = uniform_fan_in(rng, out_dim, in_dim)
        self.weight = Parameter(w, name="weight")
        self.bias = Parameter(b, name="bias")
        self.act = act
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, x) -> Tensor:
        return apply_activation(linear(x, self.weight, self.bias), self.act)


class MLP(Module):
    """Stack of :class:`Linear` layers; ``hidden_act`` between, ``out_act`` last."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator,
                 hidden_act: str = "relu", out_act: str = "identity"):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        n = len(widths) - 1
        self.layers = [
            Linear(widths[i], widths[i + 1], rng, hidden_act if i < n - 1 else out_act)
            for i in range(n)
        ]
        self.widths = list(widths)

    def forward(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
