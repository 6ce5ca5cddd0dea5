"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to every entry of ``x``.

    ``x.data`` is perturbed in place and restored.
    """
    out = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn().data)
        flat[i] = orig - eps
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |analytic - numeric| / max(max |analytic|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    return float(diff / max(np.max(np.abs(analytic)) if analytic.size else 0.0, floor))


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> list:
    """Relative error of the reverse-mode gradient of ``fn()`` for each input."""
    for x in inputs:
        x.grad = None
    fn().backward()
    errors = []
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        errors.append(relative_error(analytic, numerical_grad(fn, x, eps)))
    return errors
