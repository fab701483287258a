"""Convolution layers, initialization and the named parameter registry."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {
    "none": lambda x: x,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "swish": T.swish,
}


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Module:
    """Minimal container: parameters and child modules keep insertion order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def registry(self) -> "ParamRegistry":
        return ParamRegistry(self.named_parameters())

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class ParamRegistry(OrderedDict):
    """Ordered name -> Tensor map; names are unique by construction."""

    def __init__(self, items=()):
        super().__init__()
        for name, t in items:
            if name in self:
                raise KeyError(f"duplicate parameter name {name!r}")
            self[name] = t


def param_count(params) -> int:
    if isinstance(params, Module):
        params = params.registry()
    values = params.values() if hasattr(params, "values") else params
    return sum(int(t.size) for t in values)


class ConvLayer(Module):
    def __init__(self, kernel: Tensor, bias: Tensor, dilation: int = 1, activation: str = "none"):
        super().__init__()
        if bias.shape != (kernel.shape[0],):
            raise T.ShapeError(f"bias length {bias.shape} != out channels {kernel.shape[0]}")
        if dilation < 1:
            raise ValueError("dilation must be >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.kernel = kernel
        self.bias = bias
        self.dilation = dilation
        self.activation = activation

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.kernel, self.bias, self.dilation)
        return ACTIVATIONS[self.activation](y)


def init_conv(out_ch: int, in_ch: int, k: int = 3, seed=0, *, dilation: int = 1,
              activation: str = "none", dtype=np.float32) -> ConvLayer:
    """Fan-balanced uniform kernel, zero bias.

    The limit is sqrt(6 / (fan_in + fan_out)) with both fans counted as
    channels * k * k.
    """
    if min(out_ch, in_ch, k) < 1:
        raise ValueError("extents must be positive")
    rng = as_rng(seed)
    limit = np.sqrt(6.0 / ((in_ch + out_ch) * k * k))
    w = rng.uniform(-limit, limit, size=(out_ch, in_ch, k, k)).astype(dtype)
    kernel = Tensor(w, requires_grad=True, dtype=dtype)
    bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True, dtype=dtype)
    return ConvLayer(kernel, bias, dilation=dilation, activation=activation)
