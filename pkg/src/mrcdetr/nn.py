"""Module containers and the basic layers every block is assembled from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import ConfigError
from .tensor import ops
from .tensor.core import Parameter, Tensor, constant_init, kaiming_init, zeros_init
from .tensor.flops import scope


class Module:
    """Parameter container with train/eval switching.

    Parameters, buffers and child modules are discovered from instance
    attributes in assignment order, so names and iteration are deterministic.
    """

    training = True
    _buffers: tuple[str, ...] = ()

    def forward(self, *args):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        with scope(type(self).__name__):
            return self.forward(*args, **kwargs)

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, child in self._children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def modules(self):
        return [m for _, m in self.named_modules()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield (f"{prefix}.{key}" if prefix else key), val
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in self._buffers:
            yield (f"{prefix}.{key}" if prefix else key), getattr(self, key)
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}.{key}" if prefix else key)

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers by dotted name, in a stable order."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state()
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, target in expected.items():
            src = np.asarray(arrays[name])
            if src.size != target.size:
                raise ConfigError(f"state {name!r}: {src.shape} cannot fill {target.shape}")
            target[...] = src.reshape(target.shape)

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def initialize(self, seed: int = 0):
        """Fill every parameter from its init spec with a seeded stream."""
        rng = np.random.default_rng(seed)
        for name, p in self.named_parameters():
            p.name = name
            p.initialize(rng)
        return self

    def astype(self, dtype):
        for p in self.parameters():
            p.astype(dtype)
        for m in self.modules():
            for key in m._buffers:
                setattr(m, key, getattr(m, key).astype(dtype))
        return self


def zero_init(model: Module) -> Module:
    """Zero every parameter, then reset norms to identity (γ=1, β=0, stats 0/1)."""
    for p in model.parameters():
        p.data[...] = 0.0
    for m in model.modules():
        if isinstance(m, (BatchNorm2d, GroupNorm)):
            m.gamma.data[...] = 1.0
        if isinstance(m, BatchNorm2d):
            m.running_mean[...] = 0.0
            m.running_var[...] = 1.0
    return model


def count_parameters(model: Module) -> int:
    return sum(p.size for p in model.parameters())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel=3, stride=1, pad=0, bias: bool = True, groups: int = 1):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if cin < 1 or cout < 1 or cin % groups or cout % groups:
            raise ConfigError(f"Conv2d channels {cin}->{cout} invalid for groups={groups}")
        self.cin, self.cout, self.kernel = cin, cout, (kh, kw)
        self.stride, self.pad, self.groups = stride, pad, groups
        self.weight = Parameter((cout, cin // groups, kh, kw), kaiming_init(cin // groups * kh * kw), "weight")
        self.bias = Parameter((cout,), zeros_init(), "bias") if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.groups)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 2, pad: int = 1, out_pad: int = 1,
                 bias: bool = True):
        if cin < 1 or cout < 1:
            raise ConfigError(f"ConvTranspose2d channels {cin}->{cout} invalid")
        self.cin, self.cout, self.kernel = cin, cout, (kernel, kernel)
        self.stride, self.pad, self.out_pad = stride, pad, out_pad
        self.weight = Parameter((cin, cout, kernel, kernel), kaiming_init(cin * kernel * kernel), "weight")
        self.bias = Parameter((cout,), zeros_init(), "bias") if bias else None

    def forward(self, x):
        return ops.transposed_conv2d(x, self.weight, self.bias, self.stride, self.pad, self.out_pad)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        if eps <= 0:
            raise ConfigError("BatchNorm2d eps must be positive")
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Parameter((channels,), constant_init(1.0), "gamma")
        self.beta = Parameter((channels,), zeros_init(), "beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class GroupNorm(Module):
    def __init__(self, num_groups: int, channels: int, eps: float = 1e-5):
        if num_groups < 1 or channels % num_groups:
            raise ConfigError(f"GroupNorm: {channels} channels not divisible into {num_groups} groups")
        self.num_groups, self.channels, self.eps = num_groups, channels, eps
        self.gamma = Parameter((channels,), constant_init(1.0), "gamma")
        self.beta = Parameter((channels,), zeros_init(), "beta")

    def forward(self, x):
        return ops.group_norm(x, self.num_groups, self.gamma, self.beta, self.eps)


class CBR(Module):
    """conv (no bias) -> batch norm -> ReLU."""

    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, momentum: float = 0.1):
        self.conv = Conv2d(cin, cout, kernel, stride, kernel // 2, bias=False)
        self.bn = BatchNorm2d(cout, momentum)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


def as_input(x, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=requires_grad)
