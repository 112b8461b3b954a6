"""Finite-difference gradient verification.

The numeric side never touches the tape: it perturbs the raw value arrays
of the checked tensors in place and re-runs the forward function, so it is
an independent oracle for the analytic gradients. The forward function must
therefore be deterministic and read its tensors fresh on every call (true
for every module in this package).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad

DEFAULT_STEP = 1e-5


def numerical_gradient(loss_fn: Callable[[], float], tensor: Tensor,
                       coords: Sequence[tuple], h: float = DEFAULT_STEP
                       ) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. selected tensor coordinates."""
    grads = np.zeros(len(coords))
    for i, coord in enumerate(coords):
        orig = tensor.data[coord]
        tensor.data[coord] = orig + h
        hi = loss_fn()
        tensor.data[coord] = orig - h
        lo = loss_fn()
        tensor.data[coord] = orig
        grads[i] = (hi - lo) / (2.0 * h)
    return grads


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                    rng: np.random.Generator, rtol: float = 1e-4,
                    atol: float = 1e-7, max_coords: int = 24,
                    h: float = DEFAULT_STEP) -> float:
    """Compare analytic and finite-difference gradients of ``fn``.

    ``fn(*inputs)`` must produce a scalar Tensor. Every input with
    ``requires_grad`` is checked on up to ``max_coords`` randomly sampled
    coordinates. A coordinate fails when
    ``|analytic - numeric| > atol + rtol * max(|analytic|, |numeric|)``.
    Returns the worst relative error seen; raises AssertionError on failure.
    """
    for t in inputs:
        t.zero_grad()
    loss = fn(*inputs)
    backward(loss)
    analytic_grads = [None if t.grad is None else t.grad.copy()
                      for t in inputs]

    def loss_value() -> float:
        with no_grad():
            return fn(*inputs).item()

    worst = 0.0
    for which, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        assert analytic_grads[which] is not None, \
            f"input {which} received no gradient"
        flat_idx = np.arange(t.size)
        if t.size > max_coords:
            flat_idx = rng.choice(t.size, size=max_coords, replace=False)
        coords = [np.unravel_index(int(i), t.shape) for i in flat_idx]
        numeric = numerical_gradient(loss_value, t, coords, h=h)
        analytic = np.array([analytic_grads[which][c] for c in coords])
        err = np.abs(analytic - numeric)
        bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
        if np.any(err > bound):
            k = int(np.argmax(err - bound))
            raise AssertionError(
                f"gradient mismatch on input {which} at {coords[k]}: "
                f"analytic {analytic[k]:.8g}, numeric {numeric[k]:.8g}")
        denom = np.maximum(np.abs(numeric), 1.0)
        worst = max(worst, float((err / denom).max()))
    return worst
