"""Small parameterised building blocks on top of :mod:`qplex_lab.autodiff`."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError

ACTIVATIONS = {
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "abs": ad.absolute,
    "tanh": ad.tanh,
    "elu": ad.elu,
    "none": lambda x: x,
}


class Module:
    """Anything that owns named parameter tensors."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def load_from(self, other: "Module") -> None:
        """Hard-copy every parameter value from a module of identical structure."""
        mine, theirs = self.named_parameters(), other.named_parameters()
        if [n for n, _ in mine] != [n for n, _ in theirs]:
            raise ContractError("parameter layouts differ")
        for (_, dst), (_, src) in zip(mine, theirs):
            if dst.shape != src.shape:
                raise DimensionError(f"{dst.shape} != {src.shape}")
            dst.data[...] = src.data

    def zero_(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.weight = ad.tensor(_uniform(rng, n_in, (n_in, n_out)), requires_grad=True)
        self.bias = ad.tensor(_uniform(rng, n_in, (n_out,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"Linear({self.n_in}->{self.n_out}) got input {x.shape}")
        return ad.affine(x, self.weight, self.bias)


class MLP(Module):
    """``n_layers`` affine maps with ``hidden_act`` between them and ``out_act`` at the end."""

    def __init__(self, n_in: int, n_out: int, hidden: int, n_layers: int, rng: np.random.Generator,
                 hidden_act: str = "relu", out_act: str = "none"):
        if n_layers < 1:
            raise ContractError("MLP needs at least one layer")
        sizes = [n_in] + [hidden] * (n_layers - 1) + [n_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.hidden_act = hidden_act
        self.out_act = out_act

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.hidden_act]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return ACTIVATIONS[self.out_act](self.layers[-1](x))


class HeadStack(Module):
    """``n_heads`` independent MLPs sharing one input, evaluated as batched matmuls.

    Input ``[N, n_in]``; output ``[n_heads, N, n_out]``.
    """

    def __init__(self, n_heads: int, n_in: int, n_out: int, hidden: int, n_layers: int,
                 rng: np.random.Generator, hidden_act: str = "relu", out_act: str = "none"):
        if n_layers < 1:
            raise ContractError("HeadStack needs at least one layer")
        self.n_heads, self.n_in, self.n_out = n_heads, n_in, n_out
        sizes = [n_in] + [hidden] * (n_layers - 1) + [n_out]
        self.weights = []
        self.biases = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.weights.append(ad.tensor(_uniform(rng, a, (n_heads, a, b)), requires_grad=True))
            self.biases.append(ad.tensor(_uniform(rng, a, (n_heads, 1, b)), requires_grad=True))
        self.hidden_act = hidden_act
        self.out_act = out_act

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"{prefix}weights.{i}", w), (f"{prefix}biases.{i}", b)]
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"HeadStack expects [N, {self.n_in}], got {x.shape}")
        n = x.shape[0]
        k = self.n_heads
        # first layer: one wide matmul against all heads' weights side by side
        w0 = ad.reshape(ad.transpose(self.weights[0], (1, 0, 2)), (self.n_in, -1))
        h = ad.affine(x, w0, ad.reshape(ad.transpose(self.biases[0], (1, 0, 2)), (-1,)))
        h = ad.transpose(ad.reshape(h, (n, k, -1)), (1, 0, 2))
        act = ACTIVATIONS[self.hidden_act]
        for w, b in zip(self.weights[1:], self.biases[1:]):
            h = ad.affine(act(h), w, b)
        return ACTIVATIONS[self.out_act](h)


class GRUCell(Module):
    """Gated recurrent cell in the standard reset/update formulation."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.input_map = Linear(n_in, 3 * hidden, rng)
        self.hidden_map = Linear(hidden, 3 * hidden, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        gi = self.input_map(x)
        gh = self.hidden_map(h)
        k = self.hidden
        r = ad.sigmoid(gi[:, :k] + gh[:, :k])
        z = ad.sigmoid(gi[:, k:2 * k] + gh[:, k:2 * k])
        n = ad.tanh(gi[:, 2 * k:] + r * gh[:, 2 * k:])
        return n + z * (h - n)


def params_of(modules: Sequence[Module]) -> list[Tensor]:
    out: list[Tensor] = []
    for m in modules:
        out.extend(m.parameters())
    return out


def freeze(module: Module) -> Module:
    """Mark every parameter as constant so forward passes build no graph."""
    for p in module.parameters():
        p.requires_grad = False
        p.grad = None
    return module
