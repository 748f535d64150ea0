"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def finite_difference_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                           indices=None) -> np.ndarray:
    """Estimate d f / d x by (f(x + h e) - f(x - h e)) / 2h per coordinate.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` (e.g. when ``x`` is a model parameter). ``indices`` restricts the
    estimate to a subset of flat coordinates; the rest are left at zero.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    coords = range(flat.size) if indices is None else indices
    with no_grad():
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            fp = _scalar(f(x))
            flat[k] = orig - h
            fm = _scalar(f(x))
            flat[k] = orig
            grad[k] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)


def _scalar(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(f: Callable[[], Tensor], params, h: float = 1e-5, max_coords: int | None = None,
                    seed: int = 0) -> dict:
    """Compare tape gradients of the scalar ``f()`` against finite differences.

    Returns a mapping from parameter index to relative error. When
    ``max_coords`` is set, a seeded random subset of each parameter's
    coordinates is probed.
    """
    params = list(params)
    for p in params:
        p.grad = None
    f().backward()
    rng = np.random.default_rng(seed)
    errors = {}
    for k, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx = None
        if max_coords is not None and p.size > max_coords:
            idx = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        numeric = finite_difference_grad(lambda _: f(), p, h, indices=idx)
        if idx is not None:
            analytic = analytic.reshape(-1)[idx]
            numeric = numeric.reshape(-1)[idx]
        errors[k] = relative_error(analytic, numeric)
    return errors
