"""Masked inpainting sampler.

At each reverse step the pixels outside the inpaint mask are overwritten
with the original image noised to the current step's marginal, so only the
masked region is actually generated while the rest of the chain stays
consistent with the forward process. The noise-free original additionally
rides along the whole time as the conditioning channel. A flag switches to
the literal noise-free replacement (known pixels kept clean mid-chain) for
comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionSchedule, p_sample_step, q_sample
from .errors import ContractError
from .ukan import Condition

__all__ = ["InpaintTask", "inpaint", "boundary_smoothness"]


@dataclass
class InpaintTask:
    """One inpainting job: original scan, binary mask (1 = generate), condition."""

    image: np.ndarray
    mask: np.ndarray
    cond: Condition
    resample_jumps: int = 1

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.image.shape != self.mask.shape:
            raise ContractError(
                f"image shape {self.image.shape} and mask shape "
                f"{self.mask.shape} differ")
        if self.image.ndim != 4 or self.image.shape[:2] != (1, 1):
            raise ContractError(
                f"task tensors must be [1,1,H,W], got {self.image.shape}")
        if not np.all(np.isfinite(self.image)):
            raise ContractError("task image contains non-finite values")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise ContractError("task mask must be binary (values in {0, 1})")
        if self.resample_jumps < 1:
            raise ContractError(
                f"resample_jumps must be >= 1, got {self.resample_jumps}")


def inpaint(net, schedule: DiffusionSchedule, task: InpaintTask,
            rng: np.random.Generator, noise_free_replacement: bool = False,
            clip_denoised: bool = False) -> np.ndarray:
    """Run the masked reverse chain; returns a [1,1,H,W] image in [0, 1].

    Two independent child streams are derived from ``rng``: the first
    drives the chain noise (identical to the plain sampler's derivation),
    the second the known-region noising, so degenerate masks reproduce the
    corresponding unmasked chains bit for bit.
    """
    chain, known = rng.spawn(2)
    mask = task.mask
    keep = 1.0 - mask
    masked_scan = keep * task.image
    x = chain.standard_normal(task.image.shape)
    for t in range(schedule.timesteps, 0, -1):
        for j in range(task.resample_jumps):
            x_gen = p_sample_step(net, schedule, x, t, masked_scan,
                                  task.cond, chain,
                                  clip_denoised=clip_denoised)
            if noise_free_replacement or t == 1:
                x_known = task.image
            else:
                x_known = q_sample(schedule, task.image, t - 1,
                                   known.standard_normal(task.image.shape))
            x_prev = mask * x_gen + keep * x_known
            if j < task.resample_jumps - 1:
                # Renoise one step forward and redo this step (RePaint loop).
                beta = schedule.beta_at(t)
                x = np.sqrt(1.0 - beta) * x_prev \
                    + np.sqrt(beta) * chain.standard_normal(x_prev.shape)
            else:
                x = x_prev
    return np.clip(x, 0.0, 1.0)


def boundary_smoothness(image: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute intensity jump across mask-boundary pixel pairs.

    A boundary pair is a 4-neighbourhood pair with one pixel inside and one
    outside the mask; each pair counts once. Lower is smoother.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if image.shape != mask.shape or image.ndim != 2:
        raise ContractError(
            f"expected matching 2-D arrays, got {image.shape} and {mask.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError("mask must be binary (values in {0, 1})")
    horiz = mask[:, 1:] != mask[:, :-1]
    vert = mask[1:, :] != mask[:-1, :]
    count = int(horiz.sum() + vert.sum())
    if count == 0:
        raise ContractError("mask has no boundary pairs")
    total = np.abs(image[:, 1:] - image[:, :-1])[horiz].sum() \
        + np.abs(image[1:, :] - image[:-1, :])[vert].sum()
    return float(total / count)
