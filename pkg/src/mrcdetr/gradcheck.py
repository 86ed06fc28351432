"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad
from .tensor.core import kink_watch


@dataclass
class ProbeResult:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric))
        # both sides vanish: nothing to compare
        if scale < 1e-8:
            return 0.0
        return abs(self.analytic - self.numeric) / scale


@dataclass
class GradcheckReport:
    probes: list[ProbeResult] = field(default_factory=list)
    tol: float = 1e-4
    skipped_kinks: int = 0
    sizes: dict = field(default_factory=dict)  # coordinates per checked tensor

    @property
    def max_rel_error(self) -> float:
        return max((p.rel_error for p in self.probes), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.rel_error <= self.tol for p in self.probes)

    def failures(self) -> list[ProbeResult]:
        return [p for p in self.probes if p.rel_error > self.tol]


def fd_step(theta: float) -> float:
    return 1e-3 * max(1.0, abs(theta))


def gradcheck(loss_fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]], n_probe: int = 16,
              seed: int = 0, tol: float = 1e-4) -> GradcheckReport:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``tensors`` are (name, leaf) pairs; each leaf must require a gradient and
    ``loss_fn`` must rebuild the loss from their current ``.data``. Up to
    ``n_probe`` coordinates per tensor are probed in random order; a probe
    whose ±h window straddles a ReLU kink is replaced by the next coordinate.
    """
    rng = np.random.default_rng(seed)
    for _, t in tensors:
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = {id(t): np.array(t.grad, copy=True) for _, t in tensors}

    report = GradcheckReport(tol=tol)
    for name, t in tensors:
        flat = t.data.reshape(-1)
        report.sizes[name] = flat.size
        accepted = 0
        # random order over every coordinate; stop once n_probe smooth probes are in
        for k in rng.permutation(flat.size):
            if accepted >= n_probe:
                break
            theta = float(flat[k])
            h = fd_step(theta)
            with no_grad():
                flat[k] = theta + h
                with kink_watch() as w_up:
                    up = float(loss_fn().data.sum())
                flat[k] = theta - h
                with kink_watch() as w_down:
                    down = float(loss_fn().data.sum())
            flat[k] = theta
            if not w_up.same_side(w_down):
                report.skipped_kinks += 1
                continue
            numeric = (up - down) / (2 * h)
            idx = np.unravel_index(int(k), t.shape)
            report.probes.append(ProbeResult(name, tuple(int(i) for i in idx),
                                             float(analytic[id(t)].reshape(-1)[k]), numeric))
            accepted += 1
    return report


# ---------------------------------------------------------------------------
# finite-difference suites over the detector's building blocks
# ---------------------------------------------------------------------------

SUITES = ("mrdcb", "aspn", "head")


def _projected(module, inputs, rng):
    """Loss = <module(*inputs), R> for a fixed random R, so every output element matters."""
    from .tensor import ops

    with no_grad():
        out = module(*inputs)
    proj = Tensor(rng.standard_normal(out.shape))

    def loss():
        return ops.sum_all(ops.mul(module(*inputs), proj))

    return loss


def _check_module(name, module, inputs, rng, n_probe, seed, tol):
    loss = _projected(module, inputs, rng)
    leaves = [(f"{name}.{p}", t) for p, t in module.named_parameters()]
    leaves += [(f"{name}.input{i}", x) for i, x in enumerate(inputs)]
    return name, gradcheck(loss, leaves, n_probe, seed, tol)


def run_suite(which: str, seed: int = 0, n_probe: int = 16, tol: float = 1e-4) -> list[tuple[str, GradcheckReport]]:
    """Gradient checks for one family of blocks; returns ``(block, report)`` pairs."""
    from .aspn import ATTENTION_KINDS, SfaBlock, make_attention
    from .detect import DetectHead, detection_loss
    from .metrics import GroundTruthBox
    from .mrdcb import DcaBlock, DcaConfig, MsruBlock, MsruConfig

    rng = np.random.default_rng(seed)

    def rand(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def init(m):
        # jitter on top of the init specs so zero or constant starts do not hide a path
        m.initialize(int(rng.integers(2**31)))
        for p in m.parameters():
            p.data += 0.1 * rng.standard_normal(p.shape)
        return m

    out = []
    if which == "mrdcb":
        dca = init(DcaBlock(DcaConfig(8, groups=2)))
        out.append(_check_module("dca", dca, [rand(2, 8, 4, 3)], rng, n_probe, seed, tol))
        msru = init(MsruBlock(MsruConfig(8, dca=DcaConfig(8, groups=2))))
        out.append(_check_module("msru", msru, [rand(2, 8, 4, 4)], rng, n_probe, seed, tol))
    elif which == "aspn":
        for kind in ATTENTION_KINDS:
            blk = init(make_attention(kind, 8))
            out.append(_check_module(kind, blk, [rand(2, 8, 5, 3)], rng, n_probe, seed, tol))
        sfa = init(SfaBlock(8, 4, 8))
        out.append(_check_module("sfa", sfa, [rand(1, 8, 2, 2), rand(1, 4, 4, 4)], rng, n_probe, seed, tol))
    elif which == "head":
        head = init(DetectHead(8, 3))
        levels = [rand(2, 8, 8, 8), rand(2, 8, 4, 4), rand(2, 8, 2, 2)]
        gts = [[GroundTruthBox((10.0, 12.0, 14.0, 20.0), 1), GroundTruthBox((30.0, 28.0, 46.0, 44.0), 2)],
               [GroundTruthBox((40.0, 8.0, 47.0, 21.0), 0), GroundTruthBox((2.0, 2.0, 62.0, 60.0), 1)]]

        def loss():
            return detection_loss(head(*levels), gts, (64, 64), 3)[0]

        leaves = [(f"head.{p}", t) for p, t in head.named_parameters()]
        leaves += [(f"head.input{i}", x) for i, x in enumerate(levels)]
        out.append(("head+loss", gradcheck(loss, leaves, n_probe, seed, tol)))
    else:
        raise ValueError(f"unknown gradcheck suite {which!r}; choose from {', '.join(SUITES)}")
    return out
