"""Layers built on the tensor engine: linear, conv, norms, pooling, attention.

Modules hold parameters as ``Tensor(requires_grad=True)`` attributes and
non-learnable state (running statistics) as numpy buffers. Parameter
iteration follows attribute declaration order, which keeps checkpoint
manifests and optimizer state deterministic.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import ConfigError, DimensionError, IncompatibilityError
from .tensor import (Tensor, as_tensor, concat, conv2d, matmul, max_pool2d,
                     relu, silu, softmax, sqrt, upsample_nearest2d)

__all__ = [
    "Module", "ModuleList", "Linear", "Conv2d", "BatchNorm2d",
    "SelfAttention2d", "layer_norm", "max_pool2d", "upsample_nearest2d",
]


class Module:
    """Base class with parameter/buffer traversal and train/eval switching."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                for i, sub in enumerate(value):
                    yield f"{name}.{i}", sub

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

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

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus buffers, as an ordered name -> array mapping."""
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            out["buffer." + name] = buf.copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | {"buffer." + n for n in buffers}
        if expected != set(state):
            missing = sorted(expected - set(state))
            surplus = sorted(set(state) - expected)
            raise IncompatibilityError(
                f"state mismatch: missing {missing or 'none'}, "
                f"unexpected {surplus or 'none'}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise IncompatibilityError(
                    f"shape mismatch for '{name}': "
                    f"checkpoint {arr.shape}, model {p.data.shape}")
            p.data = np.ascontiguousarray(arr)
        for name, buf in buffers.items():
            arr = np.asarray(state["buffer." + name], dtype=np.float64)
            if arr.shape != buf.shape:
                raise IncompatibilityError(
                    f"shape mismatch for buffer '{name}': "
                    f"checkpoint {arr.shape}, model {buf.shape}")
            buf[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    """Ordered container of submodules, traversed by index."""

    def __init__(self, modules=()):
        self._items: list[Module] = list(modules)

    def append(self, module: Module) -> None:
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(_uniform_init(rng, (out_features, in_features),
                                           in_features), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                f"linear expects last axis {self.in_features}, "
                f"got {x.shape[-1]}")
        y = matmul(x, transpose_weight(self.weight))
        if self.bias is not None:
            y = y + self.bias
        return y


def transpose_weight(w: Tensor) -> Tensor:
    return w.transpose(1, 0)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Tensor(
            _uniform_init(rng, (out_channels, in_channels,
                                kernel_size, kernel_size), fan_in),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = conv2d(as_tensor(x), self.weight, stride=self.stride,
                   padding=self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class BatchNorm2d(Module):
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with biased batch statistics and updates
    running estimates; evaluation mode uses the frozen running estimates.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(
                f"batchnorm expects [N,{self.channels},H,W], got {x.shape}")
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            y = centered / sqrt(var + self.eps)
            m = self.momentum
            self._buffers["running_mean"] *= (1.0 - m)
            self._buffers["running_mean"] += m * mu.data.reshape(-1)
            self._buffers["running_var"] *= (1.0 - m)
            self._buffers["running_var"] += m * var.data.reshape(-1)
        else:
            rm = self._buffers["running_mean"].reshape(1, -1, 1, 1)
            rv = self._buffers["running_var"].reshape(1, -1, 1, 1)
            y = (x - rm) / np.sqrt(rv + self.eps)
        return y * self.gamma.reshape(1, -1, 1, 1) \
            + self.beta.reshape(1, -1, 1, 1)


def layer_norm(x: Tensor, gamma: Tensor | None = None,
               beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; optional affine terms."""
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    y = centered / sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


class SelfAttention2d(Module):
    """Multi-head self-attention over the H*W spatial positions of a map.

    Tokens are the spatial positions with the channel vector as features.
    Output = input + proj_out(softmax(QK^T / sqrt(d)) V), so a zeroed output
    projection makes the layer an exact identity. The output projection is
    zero-initialized for that reason.
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 heads: int = 1):
        super().__init__()
        if channels % heads:
            raise ConfigError(
                f"attention channels ({channels}) not divisible by "
                f"heads ({heads})")
        self.channels = channels
        self.heads = heads
        self.proj_q = Linear(channels, channels, rng)
        self.proj_k = Linear(channels, channels, rng)
        self.proj_v = Linear(channels, channels, rng)
        self.proj_out = Linear(channels, channels, rng)
        self.proj_out.weight.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(
                f"attention expects [N,{self.channels},H,W], got {x.shape}")
        n, c, h, w = x.shape
        t = h * w
        dh = c // self.heads
        tokens = x.reshape(n, c, t).transpose(0, 2, 1)  # [n, t, c]

        def split(proj):
            return proj(tokens).reshape(n, t, self.heads, dh) \
                .transpose(0, 2, 1, 3)  # [n, heads, t, dh]

        q, k, v = split(self.proj_q), split(self.proj_k), split(self.proj_v)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        attn = softmax(scores, axis=-1)
        ctx = matmul(attn, v).transpose(0, 2, 1, 3).reshape(n, t, c)
        out_tokens = tokens + self.proj_out(ctx)
        return out_tokens.transpose(0, 2, 1).reshape(n, c, h, w)
