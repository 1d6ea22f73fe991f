"""Layer building blocks on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Base class: parameter discovery by attribute traversal."""

    def named_parameters(self, prefix: str = ""):
        out = []
        for attr, value in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Parameter):
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(path))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{path}.{i}"))
                    elif isinstance(item, Parameter):
                        out.append((f"{path}.{i}", item))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def finalize_names(self, prefix: str = ""):
        """Assign unique checkpoint path names to every parameter."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names after finalize_names")
        return self

    def zero_grad(self):
        # zeros, not None: parameters off the active loss path (ablation
        # variants) must still look like "gradient zero" to the optimizer
        for p in self.parameters():
            p.tensor.grad = np.zeros_like(p.tensor.data)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int | None = None, zero_init: bool = False):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        if zero_init:
            w = np.zeros((cout, cin, k, k))
        else:
            w = T.he_uniform(rng, (cout, cin, k, k), fan_in=cin * k * k)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.tensor, self.bias.tensor, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, stride: int = 2,
                 zero_init: bool = False):
        self.stride = stride
        k = 2 * stride if stride > 1 else 3
        if zero_init:
            w = np.zeros((cin, cout, k, k))
        else:
            w = T.he_uniform(rng, (cin, cout, k, k), fan_in=cin * k * k)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight.tensor, self.bias.tensor, stride=self.stride)


class ChannelAffine(Module):
    """Per-channel learnable scale and bias (stand-in for batch norm)."""

    def __init__(self, channels: int):
        self.scale = Parameter(np.ones((1, channels, 1, 1)))
        self.bias = Parameter(np.zeros((1, channels, 1, 1)))

    def __call__(self, x: Tensor) -> Tensor:
        return x * self.scale.tensor + self.bias.tensor


class ResidualBlock(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.aff1 = ChannelAffine(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.aff2 = ChannelAffine(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.aff1(self.conv1(x)))
        h = self.aff2(self.conv2(h))
        return T.relu(x + h)
