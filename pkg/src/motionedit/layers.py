"""Module registry and basic parameterised layers."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    GROUPS,
    ConfigurationError,
    Parameter,
    Tensor,
    conv2d,
    get_dtype,
    group_norm,
    layer_norm,
    linear,
)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator backed by Philox-4x64, a counter-based bit generator."""
    return np.random.Generator(np.random.Philox(int(seed)))


class Module:
    """Container that discovers parameters and child modules from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if id(p) in seen:
                raise ConfigurationError(f"parameter {name} registered twice")
            seen.add(id(p))
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(values: np.ndarray, group: str) -> Parameter:
    return Parameter(values.astype(get_dtype()), group)


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, group: str, rng: np.random.Generator,
                 bias: bool = True, zero: bool = False):
        if group not in GROUPS:
            raise ConfigurationError(f"unknown parameter group {group!r}")
        w = np.zeros((d_in, d_out)) if zero else init_uniform(rng, (d_in, d_out), d_in)
        self.weight = _param(w, group)
        self.bias = _param(np.zeros(d_out), group) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, group: str, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, zero: bool = False):
        fan_in = c_in * kernel * kernel
        shape = (c_out, c_in, kernel, kernel)
        w = np.zeros(shape) if zero else init_uniform(rng, shape, fan_in)
        self.weight = _param(w, group)
        self.bias = _param(np.zeros(c_out), group)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, group: str):
        if channels % groups:
            raise ConfigurationError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.gain = _param(np.ones(channels), group)
        self.bias = _param(np.zeros(channels), group)

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gain, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, group: str):
        self.gain = _param(np.ones(d), group)
        self.bias = _param(np.zeros(d), group)

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


def norm_groups(channels: int, preferred: int = 8) -> int:
    g = min(preferred, channels)
    while channels % g:
        g -= 1
    return g
