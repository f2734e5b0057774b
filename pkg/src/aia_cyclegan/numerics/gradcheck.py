"""Central finite differences, the oracle every analytic gradient is checked against."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad, promoted_precision

KINK_MARGIN = 1e-2


def finite_difference_gradient(f: Callable[[np.ndarray], float], at: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Estimate the gradient of scalar ``f`` at ``at`` element by element.

    Each entry is ``(f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)``, evaluated
    in float64.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array(at, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def away_from_kinks(x: np.ndarray, margin: float = KINK_MARGIN) -> np.ndarray:
    """Push entries with ``|x| < margin`` out to ``±margin`` (sign preserved, zero goes positive)."""
    x = np.array(x, dtype=np.float64)
    small = np.abs(x) < margin
    x[small] = np.where(x[small] < 0, -margin, margin)
    return x


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the larger gradient's max magnitude."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def gradient_check(
    build: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-3,
    seed: int = 918273,
) -> float:
    """Compare reverse-mode gradients with central differences.

    ``build`` evaluates the computation from ``tensors`` (leaves that
    require grad). A fixed random projection turns any output into a scalar.
    Returns the worst :func:`relative_error` over all tensors. Callers are
    expected to have created the tensors inside :func:`promoted_precision`.
    """
    with promoted_precision():
        out = build()
        weights = np.random.default_rng(seed).standard_normal(out.shape)

        def scalar() -> float:
            with no_grad():
                return float(np.sum(build().data.astype(np.float64) * weights))

        for t in tensors:
            t.grad = np.zeros_like(t.data)
        out.backward(weights.astype(out.dtype))
        worst = 0.0
        for t in tensors:
            analytic = t.grad.astype(np.float64).copy()
            original = t.data

            def f(x: np.ndarray) -> float:
                t.data = x.astype(original.dtype)
                return scalar()

            numeric = finite_difference_gradient(f, original, eps)
            t.data = original
            worst = max(worst, relative_error(analytic, numeric))
        return worst
