"""Image fidelity metrics (PSNR, SSIM, MSE, MAE) and evaluation reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "mse", "mae", "masked_mse", "psnr", "ssim",
    "EvalRow", "EvalReport", "REFERENCE_ROWS", "summary_table",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Published comparison rows (other methods, other data; shown for context
# only and never asserted against this implementation's outputs).
REFERENCE_ROWS = (
    ("autoencoder (published)", 12.6916, 0.6520, 0.0934),
    ("pix2pix-gan (published)", 17.6706, 0.7634, 0.0288),
    ("ddpm (published)", 17.3027, 0.7416, 0.0223),
    ("kan-diffusion (published)", 20.0588, 0.8037, 0.0121),
)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def masked_mse(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error over the pixels where ``mask`` is 1."""
    a, b = _check_pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise DimensionError(
            f"mask shape {mask.shape} does not match images {a.shape}")
    if not mask.any():
        raise ContractError("mask selects no pixels")
    diff = a[mask] - b[mask]
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse); identical images give float('inf')."""
    if peak <= 0:
        raise ContractError(f"peak must be positive, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), dynamic range 1.

    Both images must lie in [0, 1] and be at least as large as the window.
    """
    a, b = _check_pair(a, b)
    if a.ndim != 2:
        raise DimensionError(f"ssim expects 2-D images, got shape {a.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ContractError(
            f"images {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    for name, img in (("a", a), ("b", b)):
        if img.min() < 0.0 or img.max() > 1.0:
            raise ContractError(f"image {name} must lie in [0, 1]")
    window = _gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = np.einsum("ijkl,kl->ij", wa, window)
    mu_b = np.einsum("ijkl,kl->ij", wb, window)
    ea2 = np.einsum("ijkl,kl->ij", wa * wa, window)
    eb2 = np.einsum("ijkl,kl->ij", wb * wb, window)
    eab = np.einsum("ijkl,kl->ij", wa * wb, window)
    var_a = ea2 - mu_a ** 2
    var_b = eb2 - mu_b ** 2
    cov = eab - mu_a * mu_b
    local = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) \
        / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(local.mean())


@dataclass
class EvalRow:
    image_id: str
    psnr: float
    ssim: float
    mse: float
    mae: float


@dataclass
class EvalReport:
    """Per-image metric rows for one method, with arithmetic-mean aggregates."""

    method: str
    rows: list[EvalRow] = field(default_factory=list)

    def add(self, image_id: str, a: np.ndarray, b: np.ndarray) -> EvalRow:
        row = EvalRow(image_id, psnr(a, b), ssim(a, b), mse(a, b), mae(a, b))
        self.rows.append(row)
        return row

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    @property
    def mean_mse(self) -> float:
        return float(np.mean([r.mse for r in self.rows]))

    @property
    def mean_mae(self) -> float:
        return float(np.mean([r.mae for r in self.rows]))

    def to_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "image_id", "psnr", "ssim", "mse", "mae"])
            for r in self.rows:
                writer.writerow([self.method, r.image_id,
                                 repr(r.psnr), repr(r.ssim),
                                 repr(r.mse), repr(r.mae)])
            writer.writerow([self.method, "mean", repr(self.mean_psnr),
                             repr(self.mean_ssim), repr(self.mean_mse),
                             repr(self.mean_mae)])


def summary_table(reports: list[EvalReport],
                  include_reference: bool = False) -> str:
    """Plain-text comparison table, one aggregate row per method."""
    header = f"{'method':<28}{'PSNR':>10}{'SSIM':>10}{'MSE':>10}{'MAE':>10}"
    rule = "-" * len(header)
    lines = [header, rule]
    for rep in reports:
        lines.append(f"{rep.method:<28}{rep.mean_psnr:>10.4f}"
                     f"{rep.mean_ssim:>10.4f}{rep.mean_mse:>10.4f}"
                     f"{rep.mean_mae:>10.4f}")
    if include_reference:
        lines.append(rule)
        for label, p, s, m in REFERENCE_ROWS:
            lines.append(f"{label + ' *':<28}{p:>10.4f}{s:>10.4f}{m:>10.4f}"
                         f"{'n/a':>10}")
        lines.append("* reference (not reproduced): published values from "
                     "other data and training scale")
    return "\n".join(lines)
