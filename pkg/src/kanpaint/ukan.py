"""The denoising network: a skip-connected U-shape mixing conv and KAN stages.

The encoder stage sequence comes from an architecture string over {C, K}
("CCKKK" means two conv stages then three KAN stages); the decoder mirrors
it. Conditioning enters as one embedding vector per sample, the sum of a
sinusoidal timestep embedding passed through a two-layer MLP, a linear
embedding of the inpaint-region geometry, and a projected latent of the
masked scan from a small residual image encoder. That vector is projected
per stage and added to the stage output, broadcast over space. The masked
scan itself rides along as a second input channel, giving the network
noise-free context everywhere outside the region being generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .kan import KanBlock, SplineGrid
from .nn import (BatchNorm2d, Conv2d, Linear, Module, ModuleList,
                 max_pool2d, relu, upsample_nearest2d)
from .tensor import Tensor, as_tensor, concat

__all__ = [
    "parse_arch", "TumorGeometry", "tumor_geometry", "Condition",
    "sinusoidal_embedding", "ConvBlock", "ResBlock", "ImageEncoder",
    "UKanDenoiser", "InpaintModel", "GEOMETRY_FEATURES",
]

GEOMETRY_FEATURES = 7  # area fraction, centroid x/y, bbox x0/y0/x1/y1


def parse_arch(s: str) -> list[str]:
    """Validate an encoder architecture string over the {C, K} alphabet."""
    if not s:
        raise ConfigError("architecture string is empty")
    for i, ch in enumerate(s):
        if ch not in ("C", "K"):
            raise ConfigError(
                f"invalid architecture character {ch!r} at index {i} in {s!r}")
    return list(s)


@dataclass(frozen=True)
class TumorGeometry:
    """Normalized geometry of the region to inpaint.

    ``w`` is the mask area fraction; centroid and bounding box are
    normalized to [0, 1] by the last valid pixel index. An empty mask is
    the all-zeros sentinel.
    """

    w: float = 0.0
    centroid_x: float = 0.0
    centroid_y: float = 0.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def as_vector(self) -> np.ndarray:
        return np.array([self.w, self.centroid_x, self.centroid_y,
                         *self.bbox], dtype=np.float64)


def tumor_geometry(mask: np.ndarray) -> TumorGeometry:
    """Geometry features of a binary [H, W] mask."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError("mask must be binary (values in {0, 1})")
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return TumorGeometry()
    area = len(ys) / (h * w)
    cx = xs.mean() / (w - 1) if w > 1 else 0.0
    cy = ys.mean() / (h - 1) if h > 1 else 0.0
    bbox = (xs.min() / (w - 1) if w > 1 else 0.0,
            ys.min() / (h - 1) if h > 1 else 0.0,
            xs.max() / (w - 1) if w > 1 else 0.0,
            ys.max() / (h - 1) if h > 1 else 0.0)
    return TumorGeometry(area, float(cx), float(cy),
                         tuple(float(v) for v in bbox))


@dataclass
class Condition:
    """Per-sample conditioning: image latent plus inpaint-region geometry."""

    image_latent: Tensor
    tumor: tuple[TumorGeometry, ...]

    def __post_init__(self):
        self.image_latent = as_tensor(self.image_latent)
        self.tumor = tuple(self.tumor)
        if self.image_latent.ndim != 2 or \
                self.image_latent.shape[0] != len(self.tumor):
            raise DimensionError(
                f"condition batch mismatch: latent {self.image_latent.shape}, "
                f"{len(self.tumor)} geometry entries")

    @property
    def tumor_features(self) -> np.ndarray:
        return np.stack([g.as_vector() for g in self.tumor])


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard sin/cos positional features of integer timesteps."""
    if dim % 2:
        raise ConfigError(f"embedding dimension must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class ConvBlock(Module):
    """Two (conv 3x3, batchnorm, ReLU) units; spatial size preserved.

    An optional per-sample bias vector (the conditioning embedding projected
    to this width) is added between the two units so the second conv can
    process it.
    """

    def __init__(self, in_channels: int, channels: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, channels, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(channels)

    def forward(self, x: Tensor, bias: Tensor | None = None) -> Tensor:
        h = relu(self.bn1(self.conv1(as_tensor(x))))
        if bias is not None:
            h = h + bias.reshape(bias.shape[0], bias.shape[1], 1, 1)
        return relu(self.bn2(self.conv2(h)))


class ResBlock(Module):
    """Residual unit for the image encoder: conv-norm-ReLU twice plus skip."""

    def __init__(self, in_channels: int, channels: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, channels, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(channels)
        self.skip = Conv2d(in_channels, channels, 1, rng, bias=False) \
            if in_channels != channels else None

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        h = relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        shortcut = x if self.skip is None else self.skip(x)
        return relu(h + shortcut)


class ImageEncoder(Module):
    """Residual downsampling stack ending in a global-average latent."""

    def __init__(self, rng: np.random.Generator, in_channels: int = 1,
                 base_channels: int = 16, stages: int = 2,
                 latent_dim: int = 128):
        super().__init__()
        self.stages = stages
        self.latent_dim = latent_dim
        widths = [base_channels * 2 ** i for i in range(stages)]
        blocks = []
        prev = in_channels
        for width in widths:
            blocks.append(ResBlock(prev, width, rng))
            prev = width
        self.blocks = ModuleList(blocks)
        self.project = Linear(prev, latent_dim, rng)

    def forward(self, img: Tensor) -> Tensor:
        h = as_tensor(img)
        if h.ndim != 4:
            raise DimensionError(f"encoder expects [N,C,H,W], got {h.shape}")
        if h.shape[2] % 2 ** self.stages or h.shape[3] % 2 ** self.stages:
            raise DimensionError(
                f"encoder input {h.shape[2]}x{h.shape[3]} not divisible by "
                f"2^{self.stages}")
        for block in self.blocks:
            h = max_pool2d(block(h))
        pooled = h.mean(axis=(2, 3))
        return self.project(pooled)


class _Stage(Module):
    """One U-net stage: a block receiving the projected conditioning."""

    def __init__(self, block: Module, embed_dim: int, channels: int,
                 rng: np.random.Generator):
        super().__init__()
        self.block = block
        self.emb_proj = Linear(embed_dim, channels, rng)

    def forward(self, x: Tensor, emb: Tensor) -> Tensor:
        return self.block(x, bias=self.emb_proj(emb))


class UKanDenoiser(Module):
    """U-shaped denoiser with per-stage block types from an arch string.

    Inputs are the noisy image and the masked scan, concatenated on the
    channel axis; output is a single-channel prediction with the input's
    spatial shape. Width doubles at every downsampling stage.
    """

    def __init__(self, rng: np.random.Generator, arch: str = "CCKKK",
                 base_channels: int = 16, embed_dim: int = 128,
                 spline_grid: SplineGrid | None = None, kan_depth: int = 1,
                 attention_heads: int = 1, num_timesteps: int | None = None):
        super().__init__()
        blocks = parse_arch(arch)
        grid = spline_grid or SplineGrid()
        self.arch = "".join(blocks)
        self.embed_dim = embed_dim
        self.num_timesteps = num_timesteps
        self.widths = [base_channels * 2 ** i for i in range(len(blocks))]

        def make_block(kind: str, cin: int, cout: int) -> Module:
            if kind == "C":
                return ConvBlock(cin, cout, rng)
            return KanBlock(cin, cout, grid, rng, depth=kan_depth,
                            heads=attention_heads)

        self.time_mlp1 = Linear(embed_dim, embed_dim, rng)
        self.time_mlp2 = Linear(embed_dim, embed_dim, rng)
        self.tumor_embed = Linear(GEOMETRY_FEATURES, embed_dim, rng)
        self.latent_proj = Linear(embed_dim, embed_dim, rng)

        enc = []
        prev = 2
        for kind, width in zip(blocks, self.widths):
            enc.append(_Stage(make_block(kind, prev, width),
                              embed_dim, width, rng))
            prev = width
        self.encoder = ModuleList(enc)

        dec = []
        for i, (kind, width) in enumerate(zip(blocks, self.widths)):
            out_width = self.widths[i - 1] if i > 0 else self.widths[0]
            dec.append(_Stage(make_block(kind, 2 * width, out_width),
                              embed_dim, out_width, rng))
        self.decoder = ModuleList(dec)
        self.head = Conv2d(self.widths[0], 1, 1, rng)

    def _embedding(self, t: np.ndarray, cond: Condition) -> Tensor:
        from .tensor import silu  # local import keeps module surface tidy
        te = Tensor(sinusoidal_embedding(t, self.embed_dim))
        emb = self.time_mlp2(silu(self.time_mlp1(te)))
        emb = emb + self.tumor_embed(Tensor(cond.tumor_features))
        return emb + self.latent_proj(cond.image_latent)

    def forward(self, x_t: Tensor, masked_scan: Tensor, t: np.ndarray,
                cond: Condition) -> Tensor:
        x_t = as_tensor(x_t)
        masked_scan = as_tensor(masked_scan)
        if x_t.shape != masked_scan.shape:
            raise DimensionError(
                f"noisy input {x_t.shape} and masked scan "
                f"{masked_scan.shape} differ")
        n, c, h, w = x_t.shape
        if c != 1:
            raise DimensionError(f"expected single-channel input, got {c}")
        stages = len(self.encoder)
        if h % 2 ** stages or w % 2 ** stages:
            raise ConfigError(
                f"spatial dims {h}x{w} not divisible by 2^{stages} "
                f"(arch {self.arch!r})")
        t = np.asarray(t).reshape(-1)
        if len(t) != n:
            raise DimensionError(f"got {len(t)} timesteps for batch {n}")
        if np.any(t < 1) or (self.num_timesteps is not None
                             and np.any(t > self.num_timesteps)):
            raise ContractError(
                f"timesteps must lie in [1, {self.num_timesteps}], got {t}")

        emb = self._embedding(t, cond)
        hmap = concat([x_t, masked_scan], axis=1)
        skips = []
        for stage in self.encoder:
            hmap = stage(hmap, emb)
            skips.append(hmap)
            hmap = max_pool2d(hmap)
        for i in range(stages - 1, -1, -1):
            hmap = upsample_nearest2d(hmap)
            hmap = concat([hmap, skips[i]], axis=1)
            hmap = self.decoder[i](hmap, emb)
        return self.head(hmap)


class InpaintModel(Module):
    """Denoiser plus its conditioning image encoder, trained together."""

    def __init__(self, denoiser: UKanDenoiser, encoder: ImageEncoder):
        super().__init__()
        if encoder.latent_dim != denoiser.embed_dim:
            raise ConfigError(
                f"encoder latent dim {encoder.latent_dim} != denoiser "
                f"embedding dim {denoiser.embed_dim}")
        self.denoiser = denoiser
        self.encoder = encoder

    def predict(self, x_t, masked_scan, t, cond: Condition) -> Tensor:
        return self.denoiser(x_t, masked_scan, t, cond)

    def condition(self, masked_scan: np.ndarray, mask: np.ndarray) -> Condition:
        """Build the sampling-time condition from a masked scan and its mask."""
        from .tensor import no_grad
        geoms = tuple(tumor_geometry(mask[i, 0]) for i in range(mask.shape[0]))
        with no_grad():
            latent = self.encoder(Tensor(masked_scan))
        return Condition(Tensor(latent.data), geoms)
