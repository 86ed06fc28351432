"""Tensor, parameter and tape types for reverse-mode differentiation.

A :class:`Tensor` is a thin wrapper around a contiguous numpy array. Ops in
:mod:`mrcdetr.tensor.ops` append a node to the innermost active :class:`Tape`
whenever one of their inputs requires a gradient; :func:`backward` replays the
tape once, in reverse, and deposits gradients on the leaves.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, TapeError

DEBUG = os.environ.get("MRCDETR_DEBUG", "") not in ("", "0")

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Dense array in row-major NCHW layout (other ranks allowed for plumbing)."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)


@dataclass(frozen=True)
class InitSpec:
    """How a parameter is filled by :meth:`Parameter.initialize`.

    ``kind`` is one of ``zero``, ``constant``, ``uniform`` or ``kaiming``.
    For ``constant`` ``value`` is the fill; for ``uniform`` it is the bound b
    of U(-b, b); for ``kaiming`` it is the fan-in.
    """

    kind: str = "zero"
    value: float = 0.0

    def sample(self, shape, rng: np.random.Generator, dtype) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(shape, dtype=dtype)
        if self.kind == "constant":
            return np.full(shape, self.value, dtype=dtype)
        if self.kind == "uniform":
            return rng.uniform(-self.value, self.value, size=shape).astype(dtype)
        if self.kind == "kaiming":
            # He-uniform for ReLU networks: bound = sqrt(6 / fan_in)
            bound = math.sqrt(6.0 / max(1.0, self.value))
            return rng.uniform(-bound, bound, size=shape).astype(dtype)
        raise ValueError(f"unknown init kind {self.kind!r}")


def zeros_init() -> InitSpec:
    return InitSpec("zero")


def constant_init(c: float) -> InitSpec:
    return InitSpec("constant", float(c))


def uniform_init(bound: float) -> InitSpec:
    return InitSpec("uniform", float(bound))


def kaiming_init(fan_in: int) -> InitSpec:
    return InitSpec("kaiming", float(fan_in))


class Parameter(Tensor):
    """Learnable tensor with a gradient buffer of the same shape.

    The buffer accumulates across backward passes until :meth:`zero_grad`.
    """

    __slots__ = ("name", "init")

    def __init__(self, shape, init: InitSpec | None = None, name: str = "", dtype=np.float64):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.name = name
        self.init = init or zeros_init()
        self.grad = np.zeros_like(self.data)

    def initialize(self, rng: np.random.Generator) -> None:
        self.data[...] = self.init.sample(self.shape, rng, self.dtype)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.shape:
            raise ContractError(f"cannot assign {value.shape} to parameter {self.name!r} of shape {self.shape}")
        self.data[...] = value

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Append-only record of differentiable ops, consumed by one backward pass.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded when any input requires a gradient.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


_ACTIVE: list[Tape] = []


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class no_grad:
    """Suspend recording for the enclosed block."""

    def __enter__(self):
        self._saved = list(_ACTIVE)
        _ACTIVE.clear()
        return self

    def __exit__(self, *exc):
        _ACTIVE.extend(self._saved)
        return False


def record(op: str, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Attach ``backward`` (upstream grad -> per-input grads) to the active tape."""
    if DEBUG and output.size and not np.all(np.isfinite(output.data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    tape.nodes.append(_Node(op, tuple(inputs), output, backward))
    return output


class kink_watch:
    """Collect the activation patterns of piecewise-linear ops evaluated in the block.

    Finite differences are meaningless across a kink, so gradient checks
    compare the patterns seen at θ+h and θ−h and discard probes where they
    differ.
    """

    def __init__(self):
        self.masks: list[np.ndarray] = []

    def __enter__(self):
        _KINK_WATCHERS.append(self)
        return self

    def __exit__(self, *exc):
        _KINK_WATCHERS.remove(self)
        return False

    def same_side(self, other: "kink_watch") -> bool:
        return len(self.masks) == len(other.masks) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.masks, other.masks))


_KINK_WATCHERS: list[kink_watch] = []


def note_kinks(mask: np.ndarray) -> None:
    for w in _KINK_WATCHERS:
        w.masks.append(mask)


def backward(tape: Tape, loss: Tensor, loss_grad=None) -> dict:
    """Propagate ``loss_grad`` (default 1 for a scalar loss) back through ``tape``.

    Parameter leaves accumulate into ``param.grad``; other leaves that require a
    gradient have ``.grad`` set (or accumulated). Returns ``{leaf: grad}``.
    """
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss_grad is None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss or an explicit grad, got shape {loss.shape}")
        loss_grad = np.ones_like(loss.data)
    loss_grad = np.asarray(loss_grad, dtype=loss.dtype).reshape(loss.shape)
    tape.consumed = True

    grads = {id(loss): loss_grad}
    owners = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        owners.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = t
    tape.nodes.clear()

    leaves = {}
    for key, g in grads.items():
        t = owners[key]
        if isinstance(t, Parameter):
            t.grad += g
        elif t.grad is None:
            t.grad = np.array(g, dtype=t.dtype, copy=True)
        else:
            t.grad = t.grad + g
        leaves[t] = g
    return leaves


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
