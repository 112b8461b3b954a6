"""Kolmogorov-Arnold layers: B-spline basis, spline-edge layers, KAN blocks.

A KAN layer puts a learnable one-dimensional function on every edge of a
dense layer. Each edge function is a fixed silu "base" branch plus a
B-spline expansion:

    out[b, o] = sum_i ( base_weight[o, i] * silu(x[b, i])
                        + spline_scale[o, i] * sum_j coeffs[o, i, j] * B_j(x[b, i]) )

The basis B_j comes from a uniform knot grid over a fixed range; inputs
outside the range are clamped to it, which keeps the layer total and
bounded while diffusion training pushes activations around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Conv2d, Module, ModuleList, SelfAttention2d
from .tensor import Tensor, _record, as_tensor, matmul, relu, silu

__all__ = [
    "SplineGrid", "bspline_basis", "KanLayer", "KanBlock",
    "count_parameters", "fit_spline_coeffs",
]


@dataclass(frozen=True)
class SplineGrid:
    """Uniform B-spline grid: G intervals of order k over [range_min, range_max].

    The knot vector gets k padding knots on each side, for G + 2k + 1 knots
    and G + k basis functions in total.
    """

    range_min: float = -1.0
    range_max: float = 1.0
    num_intervals: int = 5
    order: int = 3

    def __post_init__(self):
        if not self.range_min < self.range_max:
            raise ConfigError(
                f"spline range is empty: [{self.range_min}, {self.range_max}]")
        if self.num_intervals < 1:
            raise ConfigError(f"grid size must be >= 1, got {self.num_intervals}")
        if self.order < 1:
            raise ConfigError(f"spline order must be >= 1, got {self.order}")

    @property
    def num_basis(self) -> int:
        return self.num_intervals + self.order

    @property
    def knots(self) -> np.ndarray:
        g, k = self.num_intervals, self.order
        step = (self.range_max - self.range_min) / g
        return self.range_min + step * np.arange(-k, g + k + 1, dtype=np.float64)


def _basis_tables(xc: np.ndarray, grid: SplineGrid
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Iterative Cox-de Boor on clamped inputs.

    Returns the order-k basis values (last axis of length G + k) and the
    order-(k-1) values needed for the derivative rule.
    """
    t = grid.knots
    k = grid.order
    x1 = xc[..., None]
    b = ((x1 >= t[:-1]) & (x1 < t[1:])).astype(np.float64)
    # Close the right end of the grid: x == range_max belongs to the last
    # base interval, otherwise the partition of unity would break there.
    at_max = xc == grid.range_max
    if np.any(at_max):
        b[at_max, :] = 0.0
        b[at_max, grid.num_basis - 1] = 1.0
    prev = b
    for d in range(1, k + 1):
        prev = b
        left = (x1 - t[:-d - 1]) / (t[d:-1] - t[:-d - 1]) * b[..., :-1]
        right = (t[d + 1:] - x1) / (t[d + 1:] - t[1:-d]) * b[..., 1:]
        b = left + right
    return b, prev


def bspline_basis(x, grid: SplineGrid) -> Tensor:
    """All basis values at each element of ``x``; output shape ``x.shape + (G+k,)``.

    Inputs are clamped into the grid range first. Differentiable in ``x``
    via the exact derivative recurrence; clamped points get zero gradient.
    """
    x = as_tensor(x)
    xc = np.clip(x.data, grid.range_min, grid.range_max)
    bases, prev = _basis_tables(xc, grid)

    t = grid.knots
    k = grid.order

    def bwd(g):
        # d/dx B_{i,k} = k * (B_{i,k-1}/(t[i+k]-t[i]) - B_{i+1,k-1}/(t[i+k+1]-t[i+1]))
        nb = grid.num_basis
        d_left = prev[..., :nb] / (t[k:k + nb] - t[:nb])
        d_right = prev[..., 1:nb + 1] / (t[k + 1:k + nb + 1] - t[1:nb + 1])
        deriv = k * (d_left - d_right)
        interior = (x.data > grid.range_min) & (x.data < grid.range_max)
        return ((g * deriv).sum(axis=-1) * interior,)

    return _record("bspline_basis", bases, (x,), bwd)


def fit_spline_coeffs(grid: SplineGrid, xs: np.ndarray, ys: np.ndarray
                      ) -> np.ndarray:
    """Least-squares coefficients so that sum_j c_j B_j(xs) ~= ys."""
    xs = np.asarray(xs, dtype=np.float64)
    design, _ = _basis_tables(np.clip(xs, grid.range_min, grid.range_max), grid)
    coeffs, *_ = np.linalg.lstsq(design, np.asarray(ys, dtype=np.float64),
                                 rcond=None)
    return coeffs


class KanLayer(Module):
    """Dense layer whose every edge carries a learnable spline activation."""

    def __init__(self, in_features: int, out_features: int, grid: SplineGrid,
                 rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.grid = grid
        nb = grid.num_basis
        bound = 1.0 / np.sqrt(in_features)
        self.base_weight = Tensor(
            rng.uniform(-bound, bound, size=(out_features, in_features)),
            requires_grad=True)
        self.spline_scale = Tensor(
            np.full((out_features, in_features), bound), requires_grad=True)
        self.spline_coeffs = Tensor(
            rng.normal(0.0, 0.1 / nb ** 0.25,
                       size=(out_features, in_features, nb)),
            requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"kan layer expects [batch, {self.in_features}], got {x.shape}")
        b = x.shape[0]
        nb = self.grid.num_basis
        basis = bspline_basis(x, self.grid)  # [b, in, nb]
        scaled = (self.spline_scale.reshape(self.out_features,
                                            self.in_features, 1)
                  * self.spline_coeffs)
        spline_part = matmul(basis.reshape(b, self.in_features * nb),
                             scaled.reshape(self.out_features,
                                            self.in_features * nb).transpose(1, 0))
        base_part = matmul(silu(x), self.base_weight.transpose(1, 0))
        return base_part + spline_part


class KanBlock(Module):
    """Conv, then tokenwise KAN layer(s), then ReLU, then self-attention.

    The conv is 3x3 stride 1 with padding 1, so spatial dimensions are
    preserved end to end. The KAN layers act on each spatial position's
    channel vector (tokens of dimension C).
    """

    def __init__(self, in_channels: int, channels: int, grid: SplineGrid,
                 rng: np.random.Generator, depth: int = 1, heads: int = 1):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"kan block depth must be >= 1, got {depth}")
        self.channels = channels
        self.conv = Conv2d(in_channels, channels, 3, rng, padding=1)
        self.kans = ModuleList(
            [KanLayer(channels, channels, grid, rng) for _ in range(depth)])
        self.attention = SelfAttention2d(channels, rng, heads=heads)

    def forward(self, x: Tensor, bias: Tensor | None = None) -> Tensor:
        h = self.conv(as_tensor(x))
        if bias is not None:
            # conditioning embedding projected to this width, broadcast
            # over space so the KAN and attention layers can process it
            h = h + bias.reshape(bias.shape[0], bias.shape[1], 1, 1)
        n, c, hh, ww = h.shape
        tokens = h.reshape(n, c, hh * ww).transpose(0, 2, 1) \
            .reshape(n * hh * ww, c)
        for kan in self.kans:
            tokens = kan(tokens)
        tokens = relu(tokens)
        h = tokens.reshape(n, hh * ww, c).transpose(0, 2, 1) \
            .reshape(n, c, hh, ww)
        return self.attention(h)


def count_parameters(module: Module) -> int:
    """Number of learnable scalars in a module tree."""
    return sum(p.data.size for p in module.parameters())
