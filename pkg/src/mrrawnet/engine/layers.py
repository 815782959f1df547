"""Stateful layers and a small module tree with path-named parameters."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .autograd import Parameter, Tensor


class Module:
    """Container for parameters, buffers and child modules.

    Parameters and children are discovered from instance attributes in
    assignment order, so paths such as ``backbone.stages.0.1.gate.w1`` are
    stable for a fixed construction sequence.
    """

    buffer_names: tuple = ()

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.buffer_names:
            yield f"{prefix}{name}", getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def name_parameters(self) -> None:
        for path, p in self.named_parameters():
            p.name = path

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {path: p.data for path, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into parameters and buffers, naming any mismatched path."""
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(expected) + list(buffers) if k not in state]
        if missing:
            raise KeyError(f"state is missing parameter {missing[0]!r}")
        unknown = [k for k in state if k not in expected and k not in buffers]
        if unknown:
            raise KeyError(f"state has unexpected parameter {unknown[0]!r}")
        for path, p in expected.items():
            value = np.asarray(state[path])
            if value.shape != p.shape:
                raise ValueError(
                    f"parameter {path!r} has shape {value.shape}, model expects {p.shape}")
            p.data = value.astype(p.dtype).copy()
            p.zero_grad()
        for path, buf in buffers.items():
            value = np.asarray(state[path])
            if value.shape != buf.shape:
                raise ValueError(
                    f"buffer {path!r} has shape {value.shape}, model expects {buf.shape}")
            buf[...] = value


class ModuleList(Module):
    """Indexed children, named ``0``, ``1``, ... in parameter paths."""

    def __init__(self, modules=()):
        super().__init__()
        for i, m in enumerate(modules):
            setattr(self, str(i), m)

    def __len__(self):
        return sum(1 for _ in self.children())

    def __iter__(self):
        return (m for _, m in self.children())

    def __getitem__(self, i: int) -> Module:
        return getattr(self, str(i))


def uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, *,
                 rng: np.random.Generator, stride: int = 1, dilation: int = 1,
                 padding="same", groups: int = 1, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.stride, self.dilation, self.padding, self.groups = stride, dilation, padding, groups
        fan_in = in_channels // groups * kernel_size
        self.weight = Parameter(uniform_fan_in(
            rng, (out_channels, in_channels // groups, kernel_size), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation,
                        padding=self.padding, groups=self.groups)


class ConvTranspose1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, *,
                 rng: np.random.Generator, stride: int = 1, bias: bool = False,
                 dtype=np.float64):
        super().__init__()
        self.stride = stride
        self.weight = Parameter(uniform_fan_in(
            rng, (in_channels, out_channels, kernel_size), in_channels * kernel_size, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose1d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float64):
        super().__init__()
        self.weight = Parameter(uniform_fan_in(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25, dtype=np.float64):
        super().__init__()
        self.slope = Parameter(np.full(channels, init, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.prelu(x, self.slope)


class GlobalLayerNorm(Module):
    def __init__(self, channels: int, dtype=np.float64):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.global_layer_norm(x, self.gamma, self.beta)


class BatchNorm1d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, dtype=np.float64):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              training=self.training)


def count_parameters(module: Optional[Module]) -> int:
    if module is None:
        return 0
    return sum(p.size for p in module.parameters())
