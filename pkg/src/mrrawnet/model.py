"""Statistics pooling head, model assembly, parameter accounting and checkpoints."""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .backbone import AFMSRes2Block, Backbone, BackboneConfig
from .engine import functional as F
from .engine.autograd import Tensor, clamped_sqrt, concat
from .engine.functional import NORM_EPS
from .engine.layers import Conv1d, Linear, Module, ModuleList
from .errors import ConfigError
from .frontend import MRFE, MRFEConfig, ParamFbank

VARIANTS = ("mr-rawnet", "rawnet3-baseline")
CHECKPOINT_MAGIC = b"MRRW1"


class AttentiveStatsPool(Module):
    """Channel- and context-dependent attentive mean and standard deviation.

    Maps ``[B, C, L]`` to ``[B, 2C]``. The attention sees each frame next to
    the utterance mean and standard deviation of its channel.
    """

    def __init__(self, channels: int, attention_dim: int, *, rng, dtype=np.float64):
        super().__init__()
        self.attn_in = Conv1d(3 * channels, attention_dim, 1, rng=rng, dtype=dtype)
        self.attn_out = Conv1d(attention_dim, channels, 1, rng=rng, dtype=dtype)

    def weights(self, x: Tensor) -> Tensor:
        length = x.shape[2]
        ones = np.ones((1, 1, length), dtype=x.dtype)
        mu = x.mean(axis=2, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=2, keepdims=True)
        std = (var + NORM_EPS).sqrt()
        context = concat([x, mu * ones, std * ones], axis=1)
        return F.softmax(self.attn_out(F.tanh(self.attn_in(context))), axis=2)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[2] < 1:
            raise ValueError("attentive pooling needs at least one frame")
        w = self.weights(x)
        mu = (w * x).sum(axis=2)
        second = (w * x * x).sum(axis=2)
        sigma = clamped_sqrt(second - mu * mu)
        return concat([mu, sigma], axis=1)


@dataclass
class ModelConfig:
    variant: str = "mr-rawnet"
    mrfe: MRFEConfig = field(default_factory=MRFEConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    attention_dim: int = 128
    embed_dim: int = 256
    baseline_kernel: int = 251
    baseline_stride: int = 16
    baseline_pools: list = field(default_factory=lambda: [5, 3, 2])
    dtype: str = "float64"

    @classmethod
    def default(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        cfg = cls(
            mrfe=MRFEConfig(n_extractors=2, fbank_filters=16, tcn_channels=8, tcn_hidden=16,
                            blocks_per_repeat=3, repeats=1),
            backbone=BackboneConfig(channels=8, blocks_per_stage=1, pool_channels=64),
            attention_dim=16, embed_dim=32)
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg

    @classmethod
    def baseline(cls) -> "ModelConfig":
        return cls(variant="rawnet3-baseline", mrfe=MRFEConfig(fbank_filters=256),
                   backbone=BackboneConfig(channels=1024, blocks_per_stage=1))

    @property
    def frame_stride(self) -> int:
        if self.variant == "rawnet3-baseline":
            return self.baseline_stride
        return self.mrfe.frame_stride

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.backbone.validate()
        if self.variant == "mr-rawnet":
            self.mrfe.validate()
        elif len(self.baseline_pools) != 3 or min(self.baseline_pools) < 1:
            raise ConfigError("baseline_pools needs three positive pooling sizes")
        for name in ("attention_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        """Build a config from nested mappings; unknown keys are errors."""
        data = dict(data)
        nested = {"mrfe": MRFEConfig, "backbone": BackboneConfig}
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = _strict(nested[key], value, key)
            else:
                kwargs[key] = value
        return _strict(cls, kwargs, "model")


def _strict(kind, values: dict, where: str):
    if isinstance(values, kind):
        return values
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")
    return kind(**values)


class MRRawNet(Module):
    def __init__(self, cfg: ModelConfig, *, rng, dtype=np.float64):
        super().__init__()
        self.frame_stride = cfg.mrfe.frame_stride
        self.mrfe = MRFE(cfg.mrfe, rng=rng, dtype=dtype)
        self.proj = Conv1d(cfg.mrfe.out_channels, cfg.backbone.channels, 1, rng=rng, dtype=dtype)
        self.backbone = Backbone(cfg.backbone, rng=rng, dtype=dtype)
        self.pool = AttentiveStatsPool(cfg.backbone.pool_channels, cfg.attention_dim,
                                       rng=rng, dtype=dtype)
        self.embed = Linear(2 * cfg.backbone.pool_channels, cfg.embed_dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, trace: Optional[dict] = None) -> Tensor:
        notes: list = []
        o1 = self.mrfe(x)
        o2 = self.proj(o1)
        feats = self.backbone(o2, notes)
        o8 = self.pool(feats["o7"])
        emb = self.embed(o8)
        if trace is not None:
            trace.update(o1=o1.shape, o2=o2.shape, **{k: v.shape for k, v in feats.items()},
                         o8=o8.shape, embedding=emb.shape)
            if notes:
                trace["notes"] = notes
        return emb


class RawNet3Baseline(Module):
    """Single filterbank followed by three AFMS-Res2 blocks with max pooling."""

    def __init__(self, cfg: ModelConfig, *, rng, dtype=np.float64):
        super().__init__()
        self.frame_stride = cfg.baseline_stride
        self.pools = list(cfg.baseline_pools)
        channels = cfg.backbone.channels
        self.fbank = ParamFbank(cfg.mrfe.fbank_filters, cfg.baseline_kernel, cfg.baseline_stride,
                                cfg.mrfe.sample_rate, cfg.mrfe.log_compression, dtype=dtype)
        self.proj = Conv1d(cfg.mrfe.fbank_filters, channels, 1, rng=rng, dtype=dtype)
        self.stages = ModuleList(AFMSRes2Block(channels, d, rng=rng, dtype=dtype)
                                 for d in cfg.backbone.stage_dilations)
        self.fuse = Conv1d(3 * channels, cfg.backbone.pool_channels, 1, rng=rng, dtype=dtype)
        self.pool = AttentiveStatsPool(cfg.backbone.pool_channels, cfg.attention_dim,
                                       rng=rng, dtype=dtype)
        self.embed = Linear(2 * cfg.backbone.pool_channels, cfg.embed_dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, trace: Optional[dict] = None) -> Tensor:
        if x.shape[2] % self.frame_stride:
            raise ValueError(
                f"waveform length {x.shape[2]} is not a multiple of the frame stride "
                f"{self.frame_stride}; crop or pad it first")
        o1 = self.fbank(x)
        h = o2 = self.proj(o1)
        outs = []
        for block, p in zip(self.stages, self.pools):
            h = F.pool1d(block(h) + h, "max", p, p)
            outs.append(h)
        p2, p3 = self.pools[1], self.pools[2]
        aligned = [F.pool1d(outs[0], "max", p2 * p3, p2 * p3), F.pool1d(outs[1], "max", p3, p3),
                   outs[2]]
        o6 = concat(aligned, axis=1)
        o7 = F.relu(self.fuse(o6))
        o8 = self.pool(o7)
        emb = self.embed(o8)
        if trace is not None:
            trace.update(o1=o1.shape, o2=o2.shape, o3=aligned[0].shape, o4=aligned[1].shape,
                         o5=aligned[2].shape, o6=o6.shape, o7=o7.shape, o8=o8.shape,
                         embedding=emb.shape)
        return emb


Model = Union[MRRawNet, RawNet3Baseline]


def assemble(cfg: ModelConfig, seed: int = 0) -> Model:
    """Build and deterministically initialise a model from ``cfg``."""
    cfg = copy.deepcopy(cfg)
    cfg.validate()
    rng = np.random.default_rng(seed)
    kind = MRRawNet if cfg.variant == "mr-rawnet" else RawNet3Baseline
    model = kind(cfg, rng=rng, dtype=cfg.np_dtype)
    model.config = cfg
    model.name_parameters()
    return model


def embed_waveforms(model: Model, waveforms, trace: Optional[dict] = None) -> Tensor:
    """Forward ``[B, 1, T]`` (or ``[B, T]``) waveforms to embeddings ``[B, D]``."""
    x = waveforms if isinstance(waveforms, Tensor) else Tensor(np.asarray(waveforms))
    if x.ndim == 2:
        x = x.reshape(x.shape[0], 1, x.shape[1])
    dtype = model.config.np_dtype
    if x.dtype != dtype:
        x = Tensor(x.data.astype(dtype), requires_grad=x.requires_grad)
    return model(x, trace)


def count_params(model: Optional[Module]) -> tuple[int, dict[str, int]]:
    """Total parameter count and a breakdown by top-level child module."""
    if model is None:
        return 0, {}
    breakdown: dict[str, int] = {}
    for path, p in model.named_parameters():
        top = path.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
    return sum(breakdown.values()), breakdown


def save_checkpoint(path: Union[str, Path], model: Model, meta: Optional[dict] = None) -> None:
    """Write parameters and buffers as little-endian float32 plus the config snapshot."""
    header = json.dumps({"config": model.config.to_dict(), "meta": meta or {}},
                        sort_keys=True).encode()
    state = model.state_dict()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(header)), header,
              struct.pack("<I", len(state))]
    for name, value in state.items():
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path: Union[str, Path]) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not an MRRW1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise ValueError(f"{path} is truncated")
        out = raw[pos:pos + n]
        pos += n
        return out

    (hlen,) = struct.unpack("<I", take(4))
    header = json.loads(take(hlen))
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
    return header, state


def load_checkpoint(path: Union[str, Path]) -> tuple[Model, dict]:
    """Rebuild the model from its config snapshot and load the stored values.

    Raises ``KeyError``/``ValueError`` naming the first parameter path whose
    presence or shape disagrees with the snapshot.
    """
    header, state = read_checkpoint(path)
    model = assemble(ModelConfig.from_dict(header["config"]), seed=0)
    model.load_state_dict(state)
    model.eval()
    return model, header.get("meta", {})
