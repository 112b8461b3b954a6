"""Noise schedule, forward noising, training objective, ancestral sampling.

Timesteps are 1-indexed: ``t`` runs over {1, ..., T} and schedule arrays
store the value for step t at index t - 1. The forward process is

    x_t = sqrt(alpha_bar_t) * x0 + sigma_t * eps,    sigma_t = sqrt(1 - alpha_bar_t)

and the reverse step uses the standard posterior mean with the network's
output treated as the noise estimate. Two regression targets are supported:
"epsilon" (the drawn noise) and "residual" ((x_t - x0) / sigma_t, which
equals epsilon plus ((sqrt(alpha_bar_t) - 1) / sigma_t) * x0). The residual
target does not admit an exact inversion during sampling, so the sampler
treats the prediction as a noise estimate in both modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, as_tensor, backward, no_grad, sqrt as tsqrt

__all__ = [
    "DiffusionSchedule", "make_schedule", "q_sample", "training_target",
    "diffusion_loss", "p_sample_step", "sample", "TARGET_MODES", "LOSS_NORMS",
]

TARGET_MODES = ("epsilon", "residual")
LOSS_NORMS = ("squared", "l2")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed per-step coefficient tables for T steps."""

    timesteps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    posterior_var: np.ndarray

    def _gather(self, table: np.ndarray, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.timesteps):
            raise ContractError(
                f"timestep out of range [1, {self.timesteps}]: {t}")
        return table[t - 1]

    def beta_at(self, t):
        return self._gather(self.beta, t)

    def alpha_at(self, t):
        return self._gather(self.alpha, t)

    def alpha_bar_at(self, t):
        return self._gather(self.alpha_bar, t)

    def sigma_at(self, t):
        return self._gather(self.sigma, t)

    def posterior_var_at(self, t):
        return self._gather(self.posterior_var, t)


def make_schedule(timesteps: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear beta schedule with derived alpha, alpha_bar, sigma tables."""
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"beta endpoints must satisfy 0 < start <= end < 1, "
            f"got [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(1.0 - alpha_bar)
    prev_bar = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = beta * (1.0 - prev_bar) / (1.0 - alpha_bar)
    return DiffusionSchedule(timesteps, beta, alpha, alpha_bar, sigma,
                             posterior_var)


def _per_sample(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reshape a length-N coefficient vector to broadcast over [N, ...]."""
    return np.asarray(values).reshape(-1, *([1] * (like.ndim - 1)))


def q_sample(schedule: DiffusionSchedule, x0: np.ndarray, t,
             eps: np.ndarray) -> np.ndarray:
    """Forward noising: x_t = sqrt(alpha_bar_t) x0 + sigma_t eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(
            f"x0 shape {x0.shape} and eps shape {eps.shape} differ")
    ab = schedule.alpha_bar_at(t)
    sg = schedule.sigma_at(t)
    if np.ndim(t) > 0:
        ab = _per_sample(ab, x0)
        sg = _per_sample(sg, x0)
    return np.sqrt(ab) * x0 + sg * eps


def training_target(schedule: DiffusionSchedule, x0: np.ndarray,
                    x_t: np.ndarray, t, eps: np.ndarray,
                    mode: str = "epsilon") -> np.ndarray:
    """Regression target for the denoiser under the configured mode."""
    if mode == "epsilon":
        return np.asarray(eps, dtype=np.float64)
    if mode == "residual":
        sg = schedule.sigma_at(t)
        if np.ndim(t) > 0:
            sg = _per_sample(sg, x_t)
        return (np.asarray(x_t) - np.asarray(x0)) / sg
    raise ConfigError(f"unknown target mode {mode!r}; use one of {TARGET_MODES}")


def diffusion_loss(net: Callable, schedule: DiffusionSchedule,
                   x0: np.ndarray, masked_scan: np.ndarray, cond,
                   rng: np.random.Generator, mode: str = "epsilon",
                   norm: str = "squared") -> Tensor:
    """Denoising objective: distance between prediction and target.

    Draws t ~ Uniform{1..T} per sample and eps ~ N(0, I), forms x_t, and
    returns the mean squared difference ("squared", default) or the mean
    per-sample L2 norm ("l2") between the network output and the target.
    """
    if mode not in TARGET_MODES:
        raise ConfigError(f"unknown target mode {mode!r}; use one of {TARGET_MODES}")
    if norm not in LOSS_NORMS:
        raise ConfigError(f"unknown loss norm {norm!r}; use one of {LOSS_NORMS}")
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.shape[0]
    t = rng.integers(1, schedule.timesteps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(schedule, x0, t, eps)
    target = training_target(schedule, x0, x_t, t, eps, mode=mode)
    pred = as_tensor(net(x_t, masked_scan, t, cond))
    diff = pred - target
    if norm == "squared":
        return (diff * diff).mean()
    per_sample = (diff * diff).sum(axis=tuple(range(1, x0.ndim)))
    return tsqrt(per_sample).mean()


def p_sample_step(net: Callable, schedule: DiffusionSchedule,
                  x_t: np.ndarray, t: int, masked_scan: np.ndarray, cond,
                  rng: np.random.Generator,
                  clip_denoised: bool = False) -> np.ndarray:
    """One ancestral reverse step x_t -> x_{t-1}.

    The network output is used as the noise estimate. Noise with the
    posterior variance is added for t > 1; the final step is deterministic.

    With ``clip_denoised`` the implied clean-image estimate
    ``x0 = (x_t - sigma_t * eps_hat) / sqrt(alpha_bar_t)`` is clamped to
    [0, 1] before the posterior mean is formed. When the estimate already
    lies in range this is algebraically the same step; out of range it
    stops the compounding 1/sqrt(alpha) gain from blowing up short chains.
    """
    t = int(t)
    if not 1 <= t <= schedule.timesteps:
        raise ContractError(
            f"timestep out of range [1, {schedule.timesteps}]: {t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    n = x_t.shape[0]
    with no_grad():
        eps_hat = net(x_t, masked_scan, np.full(n, t, dtype=np.int64), cond)
    eps_hat = eps_hat.data if isinstance(eps_hat, Tensor) else np.asarray(eps_hat)
    beta = schedule.beta_at(t)
    sigma = schedule.sigma_at(t)
    alpha = schedule.alpha_at(t)
    if clip_denoised:
        ab = schedule.alpha_bar_at(t)
        prev_ab = schedule.alpha_bar_at(t - 1) if t > 1 else 1.0
        x0_hat = np.clip((x_t - sigma * eps_hat) / np.sqrt(ab), 0.0, 1.0)
        mean = (np.sqrt(prev_ab) * beta * x0_hat
                + np.sqrt(alpha) * (1.0 - prev_ab) * x_t) / (1.0 - ab)
    else:
        mean = (x_t - (beta / sigma) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mean
    z = rng.standard_normal(x_t.shape)
    return mean + np.sqrt(schedule.posterior_var_at(t)) * z


def sample(net: Callable, schedule: DiffusionSchedule,
           masked_scan: np.ndarray, cond, rng: np.random.Generator,
           clip_output: bool = True, clip_denoised: bool = False) -> np.ndarray:
    """Full reverse chain from pure noise, conditioned on the masked scan.

    Consumes the first child stream of ``rng`` for the chain noise, the
    same derivation the inpainting sampler uses, so an inpaint call with an
    all-ones mask reproduces this chain exactly.
    """
    chain = rng.spawn(1)[0]
    x = chain.standard_normal(np.asarray(masked_scan).shape)
    for t in range(schedule.timesteps, 0, -1):
        x = p_sample_step(net, schedule, x, t, masked_scan, cond, chain,
                          clip_denoised=clip_denoised)
    return np.clip(x, 0.0, 1.0) if clip_output else x
