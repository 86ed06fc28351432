"""Multi-residual directional coupled blocks and the backbone built from them.

The residual unit runs two CBR layers with a skip, splits the result
channel-wise, convolves the first part, mixes channels with an expand/project
1x1 pair, and adds a directional coupled attention refinement back onto the
first residual. The attention folds G channel groups into the batch axis, so
every step between the group reshape and its inverse acts per group.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ContractError
from .nn import CBR, Conv2d, GroupNorm, Module
from .tensor import ops


@dataclass
class DcaConfig:
    channels: int
    groups: int = 8
    gn_groups: int = 1
    eps: float = 1e-5

    def __post_init__(self):
        if self.groups < 1 or self.channels % self.groups:
            raise ConfigError(f"DCA: channels {self.channels} not divisible by G={self.groups}")
        cg = self.channels // self.groups
        if self.gn_groups < 1 or cg % self.gn_groups:
            raise ConfigError(f"DCA: group width {cg} not divisible into {self.gn_groups} norm groups")
        if self.eps <= 0:
            raise ConfigError("DCA eps must be positive")


@dataclass
class MsruConfig:
    channels: int
    split_ratio: float = 0.5
    expansion: int = 2
    dca: DcaConfig | None = None

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.split_at < 1 or self.channels - self.split_at < 1:
            raise ConfigError(f"split ratio {self.split_ratio} leaves an empty half of {self.channels} channels")
        if self.expansion < 1 or int(self.expansion) != self.expansion:
            raise ConfigError(f"expansion must be a positive integer, got {self.expansion}")
        if self.dca is None:
            self.dca = DcaConfig(self.channels)
        elif self.dca.channels != self.channels:
            raise ConfigError(f"DCA channels {self.dca.channels} differ from block channels {self.channels}")

    @property
    def split_at(self) -> int:
        return int(self.split_ratio * self.channels)


class DcaBlock(Module):
    """Directional coupled attention; output shape equals input shape."""

    def __init__(self, cfg: DcaConfig):
        self.cfg = cfg
        cg = cfg.channels // cfg.groups
        self.conv_hw = Conv2d(cg, cg, 1)
        self.conv3 = Conv2d(cg, cg, 3, pad=1)
        self.gn1 = GroupNorm(cfg.gn_groups, cg, cfg.eps)
        self.gn2 = GroupNorm(cfg.gn_groups, cg, cfg.eps)

    def forward(self, x, trace: dict | None = None):
        cfg = self.cfg
        if x.shape[1] != cfg.channels:
            raise ContractError(f"DCA expects {cfg.channels} channels, got input {x.shape}")
        _, _, h, w = x.shape
        xg = ops.reshape_group(x, cfg.groups)
        ng, cg = xg.shape[:2]

        # directional strips, fused by one 1x1 conv over the [H+W, 1] column
        strip_h = ops.pool_directional(xg, "width")
        strip_w = ops.transpose(ops.pool_directional(xg, "height"), (0, 1, 3, 2))
        fused = self.conv_hw(ops.concat([strip_h, strip_w], axis=2))
        z_h, z_w = ops.split(fused, [h, w], axis=2)
        gate_h = ops.sigmoid(z_h)
        gate_w = ops.sigmoid(ops.transpose(z_w, (0, 1, 3, 2)))
        x1 = ops.mul(ops.mul(xg, gate_h), gate_w)

        x2 = self.conv3(xg)

        w1 = ops.softmax(ops.reshape(ops.global_avg_pool(self.gn1(x1)), (ng, 1, cg)), axis=2)
        w2 = ops.softmax(ops.reshape(ops.global_avg_pool(self.gn2(x2)), (ng, 1, cg)), axis=2)
        logits = ops.add(
            ops.batched_matmul(w1, ops.reshape(x2, (ng, cg, h * w))),
            ops.batched_matmul(w2, ops.reshape(x1, (ng, cg, h * w))),
        )
        attn = ops.reshape(ops.sigmoid(logits), (ng, 1, h, w))
        out = ops.unreshape_group(ops.mul(xg, attn), cfg.groups)
        if trace is not None:
            trace.update(w1=w1.data, w2=w2.data, attn=attn.data, gate_h=gate_h.data, gate_w=gate_w.data)
        return out


class MsruBlock(Module):
    """Multi-scale residual unit wrapping a :class:`DcaBlock`."""

    def __init__(self, cfg: MsruConfig, bn_momentum: float = 0.1):
        self.cfg = cfg
        c, k = cfg.channels, cfg.split_at
        self.cbr1 = CBR(c, c, 3, momentum=bn_momentum)
        self.cbr2 = CBR(c, c, 3, momentum=bn_momentum)
        self.conv_s1 = Conv2d(k, k, 3, pad=1)
        self.conv_expand = Conv2d(c, cfg.expansion * c, 1)
        self.conv_project = Conv2d(cfg.expansion * c, c, 1)
        self.dca = DcaBlock(cfg.dca)

    def forward(self, x):
        c, k = self.cfg.channels, self.cfg.split_at
        if x.shape[1] != c:
            raise ContractError(f"MSRU expects {c} channels, got input {x.shape}")
        r1 = ops.add(x, self.cbr2(self.cbr1(x)))
        s1, s2 = ops.split(r1, [k, c - k], axis=1)
        f_split = ops.concat([self.conv_s1(s1), s2], axis=1)
        f_interact = self.conv_project(self.conv_expand(f_split))
        return ops.add(r1, self.dca(f_interact))


@dataclass
class BackboneConfig:
    base_channels: int = 32
    blocks_per_stage: int = 1
    groups: int = 8
    gn_groups: int = 1
    split_ratio: float = 0.5
    expansion: int = 2
    bn_momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.base_channels < 1 or self.blocks_per_stage < 0:
            raise ConfigError("backbone needs base_channels >= 1 and blocks_per_stage >= 0")
        for mult in (2, 4, 8):
            MsruConfig(mult * self.base_channels, self.split_ratio, self.expansion,
                       DcaConfig(mult * self.base_channels, self.groups, self.gn_groups, self.eps))

    @property
    def out_channels(self) -> tuple[int, int, int]:
        c = self.base_channels
        return 2 * c, 4 * c, 8 * c


class Backbone(Module):
    """Stem of two stride-2 CBRs, then three stages emitting S3/S4/S5."""

    def __init__(self, cfg: BackboneConfig | None = None):
        cfg = cfg or BackboneConfig()
        self.cfg = cfg
        c0 = cfg.base_channels
        self.stem = [CBR(3, c0, 3, 2, cfg.bn_momentum), CBR(c0, c0, 3, 2, cfg.bn_momentum)]
        self.stages = []
        cin = c0
        for cout in cfg.out_channels:
            blocks = [CBR(cin, cout, 3, 2, cfg.bn_momentum)]
            for _ in range(cfg.blocks_per_stage):
                msru = MsruConfig(cout, cfg.split_ratio, cfg.expansion,
                                  DcaConfig(cout, cfg.groups, cfg.gn_groups, cfg.eps))
                blocks.append(MsruBlock(msru, cfg.bn_momentum))
            self.stages.append(_Stage(blocks))
            cin = cout

    def forward(self, image):
        if image.ndim != 4 or image.shape[1] != 3:
            raise ContractError(f"backbone expects [N,3,H,W] images, got {image.shape}")
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise ConfigError(f"image extents {h}x{w} must be divisible by 32")
        x = image
        for layer in self.stem:
            x = layer(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return tuple(feats)


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


def msru_forward(x, block: MsruBlock):
    return block(x)


def dca_forward(x, block: DcaBlock):
    return block(x)


def backbone_forward(image, backbone: Backbone):
    return backbone(image)
