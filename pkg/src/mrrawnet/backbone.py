"""Multi-resolution attention (MRA) backbone.

Each block runs the same AFMS-Res2Block layout on a half-rate, an original
and a double-rate copy of its input, maps the outer branches back to the
original frame rate, and fuses the three with a per-channel softmax gate
before adding the block input back.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .engine import functional as F
from .engine.autograd import Parameter, Tensor, concat, narrow, split, stack
from .engine.layers import BatchNorm1d, Conv1d, ConvTranspose1d, Linear, Module, ModuleList
from .errors import ConfigError

RES2_SCALE = 4
RES2_KERNEL = 3


@dataclass
class BackboneConfig:
    channels: int = 256
    blocks_per_stage: int = 3
    stage_dilations: list = field(default_factory=lambda: [2, 3, 4])
    gate_ratio: int = 2
    pool_channels: int = 1536

    def validate(self) -> None:
        if self.channels % RES2_SCALE:
            raise ConfigError(
                f"backbone.channels={self.channels} is not divisible by the Res2 scale {RES2_SCALE}")
        if len(self.stage_dilations) != 3:
            raise ConfigError("backbone.stage_dilations needs exactly three entries")
        if self.blocks_per_stage < 1:
            raise ConfigError("backbone.blocks_per_stage must be >= 1")
        if self.channels // self.gate_ratio < 1:
            raise ConfigError("gate bottleneck width must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class AFMS(Module):
    """alpha-feature-map scaling: ``(x + alpha) * sigmoid(W mean_t(x) + b)``."""

    def __init__(self, channels: int, *, rng, dtype=np.float64):
        super().__init__()
        self.alpha = Parameter(np.zeros(channels, dtype=dtype))
        self.fc = Linear(channels, channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        pooled = F.adaptive_avg_pool(x).reshape(x.shape[0], x.shape[1])
        scale = F.sigmoid(self.fc(pooled)).reshape(x.shape[0], x.shape[1], 1)
        return (x + self.alpha.reshape(1, -1, 1)) * scale


class Res2Dilated(Module):
    """Hierarchical split convolution with scale 4: ``y_j = conv(x_j + y_{j-1})``."""

    def __init__(self, channels: int, dilation: int, *, rng, dtype=np.float64):
        super().__init__()
        if channels % RES2_SCALE:
            raise ConfigError(f"Res2 block needs channels divisible by {RES2_SCALE}, got {channels}")
        width = channels // RES2_SCALE
        self.convs = ModuleList(
            Conv1d(width, width, RES2_KERNEL, dilation=dilation, rng=rng, dtype=dtype)
            for _ in range(RES2_SCALE - 1))

    def forward(self, x: Tensor) -> Tensor:
        parts = split(x, RES2_SCALE, axis=1)
        outs = [parts[0]]
        y = None
        for part, conv in zip(parts[1:], self.convs):
            y = conv(part if y is None else part + y)
            outs.append(y)
        return concat(outs, axis=1)


class AFMSRes2Block(Module):
    """1x1 conv, Res2Dilated and 1x1 conv (each ReLU + BN), then AFMS. No inner residual."""

    def __init__(self, channels: int, dilation: int, *, rng, dtype=np.float64):
        super().__init__()
        self.conv_in = Conv1d(channels, channels, 1, rng=rng, dtype=dtype)
        self.bn_in = BatchNorm1d(channels, dtype=dtype)
        self.res2 = Res2Dilated(channels, dilation, rng=rng, dtype=dtype)
        self.bn_mid = BatchNorm1d(channels, dtype=dtype)
        self.conv_out = Conv1d(channels, channels, 1, rng=rng, dtype=dtype)
        self.bn_out = BatchNorm1d(channels, dtype=dtype)
        self.afms = AFMS(channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.bn_in(F.relu(self.conv_in(x)))
        h = self.bn_mid(F.relu(self.res2(h)))
        h = self.bn_out(F.relu(self.conv_out(h)))
        return self.afms(h)


def downsample(x: Tensor, trace: Optional[list] = None) -> Tensor:
    """Average-pool by two; odd lengths first repeat their final frame."""
    if x.shape[2] % 2:
        x = concat([x, narrow(x, 2, x.shape[2] - 1, x.shape[2])], axis=2)
        if trace is not None:
            trace.append(f"downsample: odd length padded to {x.shape[2]}")
    return F.pool1d(x, "avg", 2, 2)


class Upsampler(Module):
    """Channel-preserving stride-2 transposed conv, initialised to frame duplication."""

    def __init__(self, channels: int, *, rng, dtype=np.float64):
        super().__init__()
        self.conv = ConvTranspose1d(channels, channels, 2, stride=2, rng=rng, dtype=dtype)
        weight = np.zeros((channels, channels, 2), dtype=dtype)
        weight[np.arange(channels), np.arange(channels), :] = 1.0
        self.conv.weight.data = weight

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


def resample(x: Tensor, direction: str, upsampler: Optional[Upsampler] = None,
             trace: Optional[list] = None) -> Tensor:
    if direction == "down":
        return downsample(x, trace)
    if direction == "up":
        if upsampler is None:
            raise ValueError("upsampling needs an Upsampler")
        return upsampler(x)
    raise ValueError(f"unknown resample direction {direction!r}")


class Gate(Module):
    """Softmax attention over the three branch outputs, per channel.

    Scores are ``W2 bn(relu(W1 mean_t(h) + b1)) + b2`` with one shared set
    of weights; the batch norm sees all three branches as one batch.
    """

    def __init__(self, channels: int, bottleneck: int, *, rng, dtype=np.float64):
        super().__init__()
        self.fc1 = Linear(channels, bottleneck, rng=rng, dtype=dtype)
        self.bn = BatchNorm1d(bottleneck, dtype=dtype)
        self.fc2 = Linear(bottleneck, channels, rng=rng, dtype=dtype)

    def scores(self, branches: list[Tensor]) -> Tensor:
        batch, channels, _ = branches[0].shape
        pooled = concat([F.adaptive_avg_pool(h).reshape(batch, channels) for h in branches], axis=0)
        z = self.fc2(self.bn(F.relu(self.fc1(pooled))))
        return z.reshape(len(branches), batch, channels)

    def attention(self, branches: list[Tensor]) -> Tensor:
        """Attention weights ``[3, B, C]``, summing to one over the branch axis."""
        return F.softmax(self.scores(branches), axis=0)

    def forward(self, *branches: Tensor) -> Tensor:
        shapes = {h.shape for h in branches}
        if len(shapes) != 1:
            raise ValueError(f"gate inputs disagree in shape: {sorted(shapes)}")
        alpha = self.attention(list(branches))
        weighted = stack(list(branches), axis=0) * alpha.reshape(*alpha.shape, 1)
        return weighted.sum(axis=0)


class MRABlock(Module):
    def __init__(self, channels: int, dilation: int, gate_bottleneck: int, *, rng,
                 dtype=np.float64):
        super().__init__()
        self.low = AFMSRes2Block(channels, dilation, rng=rng, dtype=dtype)
        self.orig = AFMSRes2Block(channels, dilation, rng=rng, dtype=dtype)
        self.high = AFMSRes2Block(channels, dilation, rng=rng, dtype=dtype)
        self.up_low = Upsampler(channels, rng=rng, dtype=dtype)
        self.up_high = Upsampler(channels, rng=rng, dtype=dtype)
        self.gate = Gate(channels, gate_bottleneck, rng=rng, dtype=dtype)

    def branches(self, x: Tensor, trace: Optional[list] = None) -> list[Tensor]:
        length = x.shape[2]
        h_low = resample(self.low(downsample(x, trace)), "up", self.up_low)
        if h_low.shape[2] != length:
            h_low = narrow(h_low, 2, 0, length)
        h_orig = self.orig(x)
        h_high = downsample(self.high(resample(x, "up", self.up_high)), trace)
        return [h_low, h_orig, h_high]

    def forward(self, x: Tensor, trace: Optional[list] = None) -> Tensor:
        if x.shape[2] < 2:
            raise ValueError("MRA block needs at least two frames")
        return self.gate(*self.branches(x, trace)) + x


class Backbone(Module):
    """Three stages of MRA blocks, concatenated and projected to ``pool_channels``."""

    def __init__(self, cfg: BackboneConfig, *, rng, dtype=np.float64):
        super().__init__()
        cfg.validate()
        bottleneck = cfg.channels // cfg.gate_ratio
        self.stages = ModuleList(
            ModuleList(MRABlock(cfg.channels, d, bottleneck, rng=rng, dtype=dtype)
                       for _ in range(cfg.blocks_per_stage))
            for d in cfg.stage_dilations)
        self.fuse = Conv1d(3 * cfg.channels, cfg.pool_channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, trace: Optional[list] = None) -> dict[str, Tensor]:
        feats = {}
        for name, stage in zip(("o3", "o4", "o5"), self.stages):
            for block in stage:
                x = block(x, trace)
            feats[name] = x
        feats["o6"] = concat([feats["o3"], feats["o4"], feats["o5"]], axis=1)
        feats["o7"] = F.relu(self.fuse(feats["o6"]))
        return feats
