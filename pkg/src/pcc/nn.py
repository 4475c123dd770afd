"""Parameter containers and the small set of learned layers the model uses."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointMismatch


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Base class: parameters and submodules are discovered from attributes
    in assignment order, which fixes parameter naming and ordering."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item
            elif isinstance(val, dict):
                for k in val:
                    item = val[k]
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointMismatch(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise CheckpointMismatch(f"{name}: expected dims {p.shape}, checkpoint has {arr.shape}")
        for name, p in own.items():
            p.data = np.ascontiguousarray(state[name], dtype=p.data.dtype)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def cast(self, dtype) -> None:
        """Convert every parameter's storage in place (used by gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)


class Linear(Module):
    """``y = x W + b`` applied over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = parameter(rng.uniform(-bound, bound, size=(out_dim,))) if bias else None
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        if x.ndim != 2:
            x = x.reshape(-1, x.shape[-1])
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        if len(lead) != 1:
            y = y.reshape(*lead, self.out_dim)
        return y


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 4, eps: float = 1e-5):
        self.scale = parameter(np.ones(channels))
        self.shift = parameter(np.zeros(channels))
        self.groups = groups
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        y = ad.group_norm(x.reshape(-1, x.shape[-1]), self.groups, self.scale, self.shift, self.eps)
        return y.reshape(*lead, x.shape[-1])


class MLP(Module):
    """Stack of Linear layers with LeakyReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, slope: float = 0.2):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.leaky_relu(x, self.slope)
        return x
