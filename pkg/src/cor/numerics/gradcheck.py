"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from cor.numerics.tensor import Tensor, no_grad


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max over checked coordinates of |analytic - numeric| / max(1, |analytic|).

    ``fn(*inputs)`` must return a scalar tensor. When ``max_coords`` is set,
    at most that many coordinates per input are sampled (without replacement).
    """
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            a_flat = a.reshape(-1)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = fn(*inputs).item()
                flat[i] = orig - eps
                down = fn(*inputs).item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
                worst = max(worst, err)
    return worst
