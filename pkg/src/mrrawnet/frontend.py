"""Multi-resolution raw-waveform front-end.

``N`` feature extractors run learnable band-pass filterbanks of doubling
kernel length over the waveform, refine each with a dilated TCN, and bring
every branch to a common frame rate ``S`` with a strided last convolution.
With ``K_1 = 50`` and ``M_1 = 16`` at 16 kHz the shared hop is 160 samples
(10 ms) and ``K_i * M_i = 800`` samples (50 ms).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .engine import functional as F
from .engine.autograd import Parameter, Tensor, concat, make_result, minimum, tabs, log1p
from .engine.layers import Conv1d, GlobalLayerNorm, Module, ModuleList, PReLU
from .errors import ConfigError

MIN_LOW_HZ = 50.0
MIN_BAND_HZ = 50.0


@dataclass(frozen=True)
class FEGeometry:
    """Kernel/stride schedule of one feature extractor (1-based ``index``)."""

    index: int
    kernel: int
    fbank_stride: int
    last_kernel: int
    last_stride: int

    @property
    def frame_stride(self) -> int:
        return self.fbank_stride * self.last_stride


def derive_geometry(base_kernel: int, base_last_kernel: int, n_extractors: int) -> list[FEGeometry]:
    """Doubling filterbank kernels, halving last-conv kernels, constant product.

    >>> [(g.kernel, g.last_kernel) for g in derive_geometry(50, 16, 4)]
    [(50, 16), (100, 8), (200, 4), (400, 2)]
    """
    if n_extractors < 1:
        raise ConfigError(f"need at least one feature extractor, got {n_extractors}")
    if base_kernel < 1 or base_last_kernel < 1:
        raise ConfigError("kernel sizes must be positive")
    product = base_kernel * base_last_kernel
    if product % 5:
        raise ConfigError(f"K_1*M_1 = {product} is not divisible by 5")
    geometry = []
    for i in range(n_extractors):
        kernel = base_kernel * 2 ** i
        if base_last_kernel % 2 ** i:
            raise ConfigError(
                f"last-conv kernel of extractor {i + 1} is {base_last_kernel}/{2 ** i}, not an integer")
        last_kernel = base_last_kernel // 2 ** i
        if (2 * kernel) % 5:
            raise ConfigError(f"filterbank stride 2*{kernel}/5 of extractor {i + 1} is not an integer")
        if last_kernel % 2:
            raise ConfigError(f"last-conv stride {last_kernel}/2 of extractor {i + 1} is not an integer")
        geometry.append(FEGeometry(i + 1, kernel, 2 * kernel // 5, last_kernel, last_kernel // 2))
    strides = {g.frame_stride for g in geometry}
    assert strides == {product // 5}, strides
    return geometry


@dataclass
class MRFEConfig:
    n_extractors: int = 4
    base_kernel: int = 50
    base_last_kernel: int = 16
    fbank_filters: int = 128
    tcn_channels: int = 64
    tcn_hidden: int = 128
    blocks_per_repeat: int = 5
    repeats: int = 2
    sample_rate: int = 16000
    log_compression: bool = True
    bias: bool = True

    @property
    def geometry(self) -> list[FEGeometry]:
        return derive_geometry(self.base_kernel, self.base_last_kernel, self.n_extractors)

    @property
    def frame_stride(self) -> int:
        return self.base_kernel * self.base_last_kernel // 5

    @property
    def out_channels(self) -> int:
        return self.tcn_channels * self.n_extractors

    def validate(self) -> None:
        self.geometry
        for field in ("fbank_filters", "tcn_channels", "tcn_hidden", "blocks_per_repeat", "repeats"):
            if getattr(self, field) < 1:
                raise ConfigError(f"mrfe.{field} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def lowpass_impulse(cutoff: Tensor, taps: np.ndarray) -> Tensor:
    """Ideal low-pass responses ``sin(2*pi*f*n) / (pi*n)`` (``2f`` at ``n = 0``).

    ``cutoff`` holds normalised frequencies ``[F]``; ``taps`` the sample
    offsets ``[K]``. Returns ``[F, K]``.
    """
    f = cutoff.data[:, None]
    n = taps[None, :]
    zero = n == 0
    safe_n = np.where(zero, 1.0, n)
    arg = 2 * np.pi * f * n
    out = np.where(zero, 2 * f, np.sin(arg) / (np.pi * safe_n))

    def grad_fn(g):
        return ((g * 2 * np.cos(arg)).sum(axis=1),)

    return make_result(out.astype(cutoff.dtype), (cutoff,), grad_fn)


def bandpass_kernels(low: Tensor, high: Tensor, gain: Tensor, kernel_size: int) -> Tensor:
    """Hamming-windowed band-pass impulse responses ``[F, K]`` centred on the kernel."""
    taps = np.arange(kernel_size) - (kernel_size - 1) / 2
    window = np.hamming(kernel_size).astype(low.dtype)
    band = lowpass_impulse(high, taps) - lowpass_impulse(low, taps)
    return band * window[None, :] * gain.reshape(-1, 1)


class ParamFbank(Module):
    """Learnable band-pass filterbank applied as a strided convolution.

    Each filter owns a low edge, a bandwidth and a gain. Edges start on the
    mel scale over 0 to 8 kHz; effective cutoffs are clamped into the Nyquist
    band with a 50 Hz minimum bandwidth, and a filter whose edges collapse
    after clamping outputs zeros.
    """

    def __init__(self, n_filters: int, kernel_size: int, stride: int, sample_rate: int = 16000,
                 log_compression: bool = True, dtype=np.float64):
        super().__init__()
        self.kernel_size, self.stride = kernel_size, stride
        self.sample_rate = sample_rate
        self.log_compression = log_compression
        self.min_low = MIN_LOW_HZ / sample_rate
        self.min_band = MIN_BAND_HZ / sample_rate
        top = sample_rate / 2 - (MIN_LOW_HZ + MIN_BAND_HZ)
        edges = mel_to_hz(np.linspace(hz_to_mel(30.0), hz_to_mel(top), n_filters + 1))
        edges = edges / sample_rate
        self.low = Parameter(edges[:-1] - self.min_low, dtype=dtype)
        self.band = Parameter(np.diff(edges) - self.min_band, dtype=dtype)
        self.gain = Parameter(np.ones(n_filters), dtype=dtype)

    def cutoffs(self) -> tuple[Tensor, Tensor]:
        low = minimum(tabs(self.low) + self.min_low, 0.5)
        high = minimum(low + self.min_band + tabs(self.band), 0.5)
        return low, high

    def kernels(self) -> Tensor:
        low, high = self.cutoffs()
        return bandpass_kernels(low, high, self.gain, self.kernel_size)

    def forward(self, x: Tensor) -> Tensor:
        k = self.kernels()
        y = F.conv1d(x, k.reshape(k.shape[0], 1, self.kernel_size), stride=self.stride,
                     padding="same")
        if self.log_compression:
            y = log1p(tabs(y))
        return y


class TCNBlock(Module):
    """Pointwise -> depthwise dilated -> pointwise, with PReLU + gLN and a residual."""

    def __init__(self, channels: int, hidden: int, dilation: int, *, rng, bias=True,
                 dtype=np.float64):
        super().__init__()
        self.pw_in = Conv1d(channels, hidden, 1, rng=rng, bias=bias, dtype=dtype)
        self.act1 = PReLU(hidden, dtype=dtype)
        self.norm1 = GlobalLayerNorm(hidden, dtype=dtype)
        self.depthwise = Conv1d(hidden, hidden, 3, dilation=dilation, groups=hidden, rng=rng,
                                bias=bias, dtype=dtype)
        self.act2 = PReLU(hidden, dtype=dtype)
        self.norm2 = GlobalLayerNorm(hidden, dtype=dtype)
        self.pw_out = Conv1d(hidden, channels, 1, rng=rng, bias=bias, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(self.act1(self.pw_in(x)))
        h = self.norm2(self.act2(self.depthwise(h)))
        return x + self.pw_out(h)


def tcn_receptive_field(blocks_per_repeat: int, repeats: int) -> int:
    return 1 + repeats * 2 * (2 ** blocks_per_repeat - 1)


class TCN(Module):
    def __init__(self, channels: int, hidden: int, blocks_per_repeat: int, repeats: int, *,
                 rng, bias=True, dtype=np.float64):
        super().__init__()
        self.blocks = ModuleList(
            TCNBlock(channels, hidden, 2 ** x, rng=rng, bias=bias, dtype=dtype)
            for _ in range(repeats) for x in range(blocks_per_repeat))

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class FeatureExtractor(Module):
    def __init__(self, geometry: FEGeometry, cfg: MRFEConfig, *, rng, dtype=np.float64):
        super().__init__()
        self.geometry = geometry
        self.fbank = ParamFbank(cfg.fbank_filters, geometry.kernel, geometry.fbank_stride,
                                cfg.sample_rate, cfg.log_compression, dtype=dtype)
        self.proj = Conv1d(cfg.fbank_filters, cfg.tcn_channels, 1, rng=rng, bias=cfg.bias,
                           dtype=dtype)
        self.tcn = TCN(cfg.tcn_channels, cfg.tcn_hidden, cfg.blocks_per_repeat, cfg.repeats,
                       rng=rng, bias=cfg.bias, dtype=dtype)
        self.last = Conv1d(cfg.tcn_channels, cfg.tcn_channels, geometry.last_kernel,
                           stride=geometry.last_stride, rng=rng, bias=cfg.bias, dtype=dtype)

    def forward(self, x: Tensor, skip: Optional[Tensor] = None) -> tuple[Tensor, Tensor]:
        """Return this extractor's frames and the pooled TCN output for the next one."""
        h = self.proj(self.fbank(x))
        if skip is not None:
            if skip.shape != h.shape:
                raise ValueError(
                    f"skip input {skip.shape} does not match extractor {self.geometry.index} "
                    f"features {h.shape}")
            h = h + skip
        h = self.tcn(h)
        skip_out = F.pool1d(h, "max", 2, 2) if h.shape[2] >= 2 else h
        return self.last(h), skip_out


class MRFE(Module):
    def __init__(self, cfg: MRFEConfig, *, rng, dtype=np.float64):
        super().__init__()
        cfg.validate()
        self.frame_stride = cfg.frame_stride
        self.extractors = ModuleList(
            FeatureExtractor(g, cfg, rng=rng, dtype=dtype) for g in cfg.geometry)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected waveform batch [B, 1, T], got {x.shape}")
        if x.shape[2] % self.frame_stride:
            raise ValueError(
                f"waveform length {x.shape[2]} is not a multiple of the frame stride "
                f"{self.frame_stride}; crop or pad it first")
        outputs, skip = [], None
        for fe in self.extractors:
            y, skip = fe(x, skip)
            outputs.append(y)
        frames = {y.shape[2] for y in outputs}
        if len(frames) != 1:
            raise RuntimeError(f"feature extractors disagree on frame count: {sorted(frames)}")
        return outputs[0] if len(outputs) == 1 else concat(outputs, axis=1)
