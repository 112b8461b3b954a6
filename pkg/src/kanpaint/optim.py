"""Adam optimizer and the exponential moving average of model weights."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .nn import Module
from .tensor import Tensor

__all__ = ["Adam", "EmaState"]


class Adam:
    """Standard Adam with bias correction; operates on parameter tensors."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        if isinstance(params, Module):
            params = params.parameters()
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * (p.grad * p.grad)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class EmaState:
    """Shadow copy of a model's parameters updated as
    ``shadow <- rate * shadow + (1 - rate) * param``.

    Tracks learnable parameters only; normalization buffers are taken from
    the live model when the shadow is applied.
    """

    def __init__(self, model: Module, rate: float = 0.995):
        if not 0.0 < rate < 1.0:
            raise ConfigError(f"EMA rate must lie in (0, 1), got {rate}")
        self.rate = rate
        self.shadow: dict[str, np.ndarray] = {
            name: p.data.copy() for name, p in model.named_parameters()}

    def update(self, model: Module) -> None:
        for name, p in model.named_parameters():
            shadow = self.shadow.get(name)
            if shadow is None or shadow.shape != p.data.shape:
                raise ContractError(
                    f"EMA shadow does not match model parameter {name!r}")
            shadow *= self.rate
            shadow += (1.0 - self.rate) * p.data

    def apply_to(self, model: Module) -> None:
        """Load the shadow values into a model's parameters."""
        for name, p in model.named_parameters():
            shadow = self.shadow.get(name)
            if shadow is None or shadow.shape != p.data.shape:
                raise ContractError(
                    f"EMA shadow does not match model parameter {name!r}")
            p.data = shadow.copy()

    def state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.shadow.items()}
