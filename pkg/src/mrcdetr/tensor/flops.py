"""FLOP accounting hooks: ops report their cost to every active counter.

Conventions: convolutions count 2 x MACs (bias excluded), a transposed
convolution is costed on its output extents, matmul is 2·B·P·K·M, and any
other arithmetic op costs 1 FLOP per output element. Pure data movement
(reshape, transpose, concat, split) is free.
"""
from __future__ import annotations

from collections import defaultdict

_COUNTERS: list["FlopCounter"] = []
_SCOPE: list[str] = []


class FlopCounter:
    def __init__(self):
        self.entries: list[tuple[str, str, int]] = []

    def __enter__(self):
        _COUNTERS.append(self)
        return self

    def __exit__(self, *exc):
        _COUNTERS.remove(self)
        return False

    @property
    def total(self) -> int:
        return sum(f for _, _, f in self.entries)

    def by_op(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for _, op, f in self.entries:
            out[op] += f
        return dict(out)

    def by_scope(self, depth: int = 2) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for scope, _, f in self.entries:
            out[".".join(scope.split(".")[:depth]) or "<root>"] += f
        return dict(out)


class scope:
    """Label FLOP entries recorded in the enclosed block."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        _SCOPE.append(self.name)

    def __exit__(self, *exc):
        _SCOPE.pop()
        return False


def count(op: str, flops: int) -> None:
    if _COUNTERS:
        label = ".".join(s for s in _SCOPE if s)
        for c in _COUNTERS:
            c.entries.append((label, op, int(flops)))
