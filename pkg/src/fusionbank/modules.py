"""Parameter containers and the two convolution layer flavors.

A Module is a lightweight named-parameter tree: registering a Tensor or
another Module as an attribute makes it reachable through
``named_parameters``, which fixes the checkpoint naming scheme. Layers are
built with an explicit ``rng`` so that construction order plus one seed fully
determines the initial weights.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError
from .tensor import ConvParams, Tensor, conv2d, relu

__all__ = ["Module", "Conv2d", "ConvBlock", "init_conv"]


class Module:
    """Base class providing named parameter traversal."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item
            elif isinstance(value, dict):
                for sub, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{sub}")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{sub}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def load_state(self, state: dict, prefix: str = "") -> None:
        """Assign parameter data from a flat name -> array mapping."""
        for name, param in self.named_parameters(prefix):
            if name not in state:
                raise ConfigurationError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != param.data.shape:
                raise ConfigurationError(
                    f"checkpoint parameter {name!r} has shape {arr.shape}, "
                    f"model expects {param.data.shape}"
                )
            param.data = arr.copy()

    def state(self, prefix: str = "") -> dict:
        return {name: p.data for name, p in self.named_parameters(prefix)}


def init_conv(out_channels: int, in_channels: int, k: int,
              rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
    """Uniform(-a, a) weights with a = sqrt(1/fan_in), zero bias."""
    if rng is None:
        w = np.zeros((out_channels, in_channels, k, k))
    else:
        a = math.sqrt(1.0 / (in_channels * k * k))
        w = rng.uniform(-a, a, size=(out_channels, in_channels, k, k))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(out_channels), requires_grad=True)


class Conv2d(Module):
    """Plain convolution layer (no activation)."""

    def __init__(self, in_channels: int, out_channels: int, k: int,
                 rng: np.random.Generator | None, stride: int = 1,
                 padding: int = 0, dilation: int = 1):
        self.weights, self.bias = init_conv(out_channels, in_channels, k, rng)
        self.stride = stride
        self.padding = padding
        self.dilation = dilation

    @property
    def conv_params(self) -> ConvParams:
        return ConvParams(self.weights, self.bias, stride=self.stride,
                          padding=self.padding, dilation=self.dilation)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.conv_params)


class ConvBlock(Module):
    """Convolution followed by ReLU; the building block of the non-gate paths."""

    def __init__(self, in_channels: int, out_channels: int, k: int,
                 rng: np.random.Generator | None, stride: int = 1,
                 padding: int = 0, dilation: int = 1):
        self.conv = Conv2d(in_channels, out_channels, k, rng, stride=stride,
                           padding=padding, dilation=dilation)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.conv(x))
