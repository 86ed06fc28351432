"""Parameter and FLOP accounting.

Parameter counts sum learnable tensor sizes (conv: Cout·Cin/groups·kh·kw plus
Cout bias; norms: 2C). FLOPs are traced by running one eval-mode forward pass
with a :class:`~mrcdetr.tensor.flops.FlopCounter` attached; see that module
for the per-op conventions (FLOPs = 2 x MACs for convolutions and matmul).
"""
from __future__ import annotations

import numpy as np

from .nn import Module
from .tensor.core import Tensor, no_grad
from .tensor.flops import FlopCounter


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def trace_flops(model: Module, input_shape, dtype=np.float64) -> FlopCounter:
    was_training = [m.training for m in model.modules()]
    model.eval()
    try:
        with no_grad(), FlopCounter() as counter:
            args = input_shape if isinstance(input_shape, list) else [input_shape]
            model(*[Tensor(np.zeros(s, dtype=dtype)) for s in args])
    finally:
        for m, t in zip(model.modules(), was_training):
            m.training = t
    return counter


def count_flops(model: Module, input_shape, dtype=np.float64) -> int:
    return trace_flops(model, input_shape, dtype).total


def cost_table(model: Module, input_shape, depth: int = 3) -> list[tuple[str, int]]:
    counter = trace_flops(model, input_shape)
    return sorted(counter.by_scope(depth).items())


class LayerStack(Module):
    """Sequential stack described by the ``layers`` section of a config file.

    ``{"input": [N, C, H, W], "stack": [{"type": "conv", "cin": 2, "cout": 4,
    "kernel": 3, "stride": 1, "pad": 1, "bias": true}, ...]}`` with layer types
    ``conv``, ``conv_transpose``, ``batch_norm``, ``group_norm``, ``relu`` and
    ``sigmoid``.
    """

    def __init__(self, spec: dict):
        from .errors import ConfigError
        from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, GroupNorm

        if "input" not in spec or "stack" not in spec:
            raise ConfigError("layers section needs 'input' and 'stack'")
        self.input_shape = tuple(int(v) for v in spec["input"])
        if len(self.input_shape) != 4:
            raise ConfigError(f"layers.input must be [N, C, H, W], got {spec['input']}")
        self.layers = []
        self.kinds = []
        for i, layer in enumerate(spec["stack"]):
            kind = layer.get("type")
            try:
                if kind == "conv":
                    mod = Conv2d(layer["cin"], layer["cout"], layer.get("kernel", 3), layer.get("stride", 1),
                                 layer.get("pad", 0), layer.get("bias", True), layer.get("groups", 1))
                elif kind == "conv_transpose":
                    mod = ConvTranspose2d(layer["cin"], layer["cout"], layer.get("kernel", 3), layer.get("stride", 2),
                                          layer.get("pad", 1), layer.get("out_pad", 1), layer.get("bias", True))
                elif kind == "batch_norm":
                    mod = BatchNorm2d(layer["channels"])
                elif kind == "group_norm":
                    mod = GroupNorm(layer.get("groups", 1), layer["channels"])
                elif kind in ("relu", "sigmoid"):
                    mod = _Activation(kind)
                else:
                    raise ConfigError(f"layers.stack[{i}]: unknown layer type {kind!r}")
            except KeyError as exc:
                raise ConfigError(f"layers.stack[{i}] ({kind}): missing field {exc}") from None
            self.layers.append(mod)
            self.kinds.append(kind)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def table(self) -> list[tuple[str, int, int]]:
        """(layer label, params, FLOPs) per layer for one forward pass at ``input_shape``."""
        rows = []
        x = Tensor(np.zeros(self.input_shape))
        self.eval()
        with no_grad():
            for i, (kind, layer) in enumerate(zip(self.kinds, self.layers)):
                with FlopCounter() as c:
                    x = layer(x)
                rows.append((f"{i}:{kind}", count_params(layer), c.total))
        return rows


class _Activation(Module):
    def __init__(self, kind: str):
        self.kind = kind

    def forward(self, x):
        from .tensor import ops

        return ops.relu(x) if self.kind == "relu" else ops.sigmoid(x)
