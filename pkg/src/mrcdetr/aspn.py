"""Adaptive screening pyramid: directional screening gates and selective fusion.

The attention slot used inside every fusion step is pluggable so lightweight
attention designs can be swapped for ablation; each kind exposes a closed-form
parameter count that the ablation report is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import ops
from .tensor.core import Tensor, constant_init, zeros_init, Parameter


class LssmBlock(Module):
    """Directional screening: Y = X ⊙ σ(conv_h(pool_W X)) ⊙ σ(conv_w(pool_H X)).

    ``kernel`` is the length of the channel-mixing 1-D convolution run along
    each pooled strip (1 is a plain 1x1 conv).
    """

    def __init__(self, channels: int, kernel: int = 1):
        if channels < 1 or kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"LSSM needs channels >= 1 and an odd kernel, got {channels}, {kernel}")
        self.channels, self.kernel = channels, kernel
        self.conv_h = Conv2d(channels, channels, (kernel, 1), pad=(kernel // 2, 0))
        self.conv_w = Conv2d(channels, channels, (1, kernel), pad=(0, kernel // 2))

    def gates(self, x):
        gate_h = ops.sigmoid(self.conv_h(ops.pool_directional(x, "width")))
        gate_w = ops.sigmoid(self.conv_w(ops.pool_directional(x, "height")))
        return gate_h, gate_w

    def forward(self, x):
        gate_h, gate_w = self.gates(x)
        return ops.mul(ops.mul(x, gate_h), gate_w)

    @staticmethod
    def param_count(channels: int, kernel: int = 1) -> int:
        return 2 * (channels * channels * kernel + channels)


class SeBlock(Module):
    """Squeeze-excitation: global pool, 1x1 reduce (r=16), ReLU, 1x1 expand, σ, channel scale."""

    def __init__(self, channels: int, reduction: int = 16):
        self.channels = channels
        hidden = self.hidden(channels, reduction)
        self.reduce = Conv2d(channels, hidden, 1)
        self.expand = Conv2d(hidden, channels, 1)

    @staticmethod
    def hidden(channels, reduction=16):
        return max(1, channels // reduction)

    def forward(self, x):
        s = ops.global_avg_pool(x)
        s = ops.sigmoid(self.expand(ops.relu(self.reduce(s))))
        return ops.mul(x, s)

    @staticmethod
    def param_count(channels: int, reduction: int = 16) -> int:
        h = SeBlock.hidden(channels, reduction)
        return 2 * channels * h + h + channels


def _sge_groups(channels: int, groups: int) -> int:
    return int(np.gcd(channels, groups))


class SgeBlock(Module):
    """Spatial group-wise enhance.

    Minimal reading of the design: per channel group, the similarity between
    each position and the group's pooled descriptor (channel sum of
    x ⊙ avgpool(x)) is standardized over space, passed through a per-group
    affine (weight init 0, bias init 1) and a sigmoid, and gates the group.
    The standardization is a variance normalization with eps rather than the
    original std + eps.
    """

    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5):
        self.channels, self.eps = channels, eps
        self.groups = _sge_groups(channels, groups)
        self.weight = Parameter((1, self.groups, 1, 1), zeros_init(), "weight")
        self.bias = Parameter((1, self.groups, 1, 1), constant_init(1.0), "bias")

    def forward(self, x):
        n, c, h, w = x.shape
        g = self.groups
        xg = ops.reshape_group(x, g)
        sim = ops.mul(xg, ops.global_avg_pool(xg))
        # channel sum via a constant ones 1x1 conv keeps everything on the tape
        ones = Tensor(np.ones((1, c // g, 1, 1), dtype=x.dtype))
        sim = ops.conv2d(sim, ones)
        t = ops.group_norm(sim, 1, eps=self.eps)
        t = ops.reshape(t, (n, g, h, w))
        t = ops.add(ops.mul(t, self.weight), self.bias)
        t = ops.reshape(t, (n * g, 1, h, w))
        return ops.unreshape_group(ops.mul(xg, ops.sigmoid(t)), g)

    @staticmethod
    def param_count(channels: int, groups: int = 8) -> int:
        return 2 * _sge_groups(channels, groups)


class CaaBlock(Module):
    """Context anchor attention.

    Minimal reading: 7x7 average pool (stride 1, zero padding counted), 1x1
    conv, depthwise 1xk then kx1 strip convs (k=11), 1x1 conv, σ, and an
    elementwise gate on the input. The original conv-norm-activation wrappers
    around the 1x1 convs are reduced to plain convs with bias.
    """

    def __init__(self, channels: int, kernel: int = 11, pool: int = 7):
        self.channels, self.kernel, self.pool = channels, kernel, pool
        self.conv1 = Conv2d(channels, channels, 1)
        self.h_conv = Conv2d(channels, channels, (1, kernel), pad=(0, kernel // 2), groups=channels)
        self.v_conv = Conv2d(channels, channels, (kernel, 1), pad=(kernel // 2, 0), groups=channels)
        self.conv2 = Conv2d(channels, channels, 1)

    def forward(self, x):
        c = self.channels
        box = Tensor(np.full((c, 1, self.pool, self.pool), 1.0 / self.pool**2, dtype=x.dtype))
        a = ops.conv2d(x, box, None, 1, self.pool // 2, groups=c)
        a = self.conv2(self.v_conv(self.h_conv(self.conv1(a))))
        return ops.mul(x, ops.sigmoid(a))

    @staticmethod
    def param_count(channels: int, kernel: int = 11) -> int:
        return 2 * (channels * channels + channels) + 2 * (channels * kernel + channels)


ATTENTION_KINDS = ("lssm", "se", "sge", "caa")


def make_attention(kind: str, channels: int, lssm_kernel: int = 1) -> Module:
    if kind == "lssm":
        return LssmBlock(channels, lssm_kernel)
    if kind == "se":
        return SeBlock(channels)
    if kind == "sge":
        return SgeBlock(channels)
    if kind == "caa":
        return CaaBlock(channels)
    raise ConfigError(f"unknown attention kind {kind!r}; registered kinds: {', '.join(ATTENTION_KINDS)}")


def attention_param_count(kind: str, channels: int, lssm_kernel: int = 1) -> int:
    if kind == "lssm":
        return LssmBlock.param_count(channels, lssm_kernel)
    if kind == "se":
        return SeBlock.param_count(channels)
    if kind == "sge":
        return SgeBlock.param_count(channels)
    if kind == "caa":
        return CaaBlock.param_count(channels)
    raise ConfigError(f"unknown attention kind {kind!r}; registered kinds: {', '.join(ATTENTION_KINDS)}")


def attention_slot(x, module: Module):
    return module(x)


class SfaBlock(Module):
    """Selective fusion of an upsampled high-level map with a screened low-level map."""

    def __init__(self, c_high: int, c_low: int, c_out: int, kind: str = "lssm", lssm_kernel: int = 1):
        self.c_high, self.c_low, self.c_out = c_high, c_low, c_out
        self.upconv = ConvTranspose2d(c_high, c_out, 3, stride=2, pad=1, out_pad=1)
        # Start the upsampling path as a constant map. With random kernels the
        # coarse level dominates the residual sum at every finer level and a
        # small training set gets memorized through it.
        self.upconv.weight.init = zeros_init()
        self.upconv.bias.init = constant_init(1.0)
        self.align = Conv2d(c_low, c_out, 1)
        self.lssm_high = make_attention(kind, c_out, lssm_kernel)
        self.lssm_low = make_attention(kind, c_low, lssm_kernel)

    def forward(self, x_high, x_low):
        if x_high.shape[1] != self.c_high or x_low.shape[1] != self.c_low:
            raise ContractError(f"SFA expects {self.c_high}/{self.c_low} channels, got {x_high.shape} and {x_low.shape}")
        h, w = x_low.shape[2:]
        if h % 2 or w % 2:
            raise ConfigError(f"SFA low-level extents {h}x{w} must be even")
        up = self.upconv(x_high)
        if up.shape[2:] != (h, w):
            raise ContractError(f"SFA: upsampled size {up.shape[2:]} does not match low-level size {(h, w)}")
        low = ops.sigmoid(self.align(self.lssm_low(x_low)))
        return ops.add(ops.mul(self.lssm_high(up), low), up)


@dataclass
class AspnConfig:
    width: int = 64
    in_channels: tuple = (64, 128, 256)
    attention: str = "lssm"
    lssm_kernel: int = 1

    def __post_init__(self):
        self.in_channels = tuple(int(c) for c in self.in_channels)
        if self.width < 1:
            raise ConfigError("ASPN width must be >= 1")
        if len(self.in_channels) != 3 or min(self.in_channels) < 1:
            raise ConfigError(f"ASPN needs three positive input widths, got {self.in_channels}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.attention!r}; registered kinds: {', '.join(ATTENTION_KINDS)}")


class Aspn(Module):
    """Top-down pyramid: P5 = proj(S5), P4 = SFA(P5, S4), P3 = SFA(P4, S3)."""

    def __init__(self, cfg: AspnConfig | None = None):
        cfg = cfg or AspnConfig()
        self.cfg = cfg
        c3, c4, c5 = cfg.in_channels
        f = cfg.width
        self.proj5 = Conv2d(c5, f, 1)
        self.sfa4 = SfaBlock(f, c4, f, cfg.attention, cfg.lssm_kernel)
        self.sfa3 = SfaBlock(f, c3, f, cfg.attention, cfg.lssm_kernel)

    def forward(self, s3, s4, s5):
        for hi, lo in ((s5, s4), (s4, s3)):
            if lo.shape[2] != 2 * hi.shape[2] or lo.shape[3] != 2 * hi.shape[3]:
                raise ConfigError(f"pyramid inputs {lo.shape} and {hi.shape} are not dyadic")
        p5 = self.proj5(s5)
        p4 = self.sfa4(p5, s4)
        p3 = self.sfa3(p4, s3)
        return p3, p4, p5


def lssm_forward(x, block: LssmBlock):
    return block(x)


def sfa_forward(x_high, x_low, block: SfaBlock):
    return block(x_high, x_low)


def aspn_forward(s3, s4, s5, aspn: Aspn):
    return aspn(s3, s4, s5)
