"""Finite-difference gradient oracles.

The analytic gradients produced by the tape are checked against central
differences computed from the same scalar function. The oracle never goes
through any backward rule, so agreement is evidence both paths are right.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_STEP = 1e-5
GRAD_MASK_FLOOR = 1e-8


def numeric_gradient(
    fn: Callable[[], Tensor],
    param: Tensor,
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """Central-difference d fn / d param, one coordinate at a time.

    ``fn`` must recompute the scalar from current parameter values on
    every call; ``param.data`` is perturbed in place and restored.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        hi = fn().item()
        flat[i] = saved - step
        lo = fn().item()
        flat[i] = saved
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(param.data.shape)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-12), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b) / denom))


def gradient_report(
    fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    step: float = DEFAULT_STEP,
    mask_floor: float = GRAD_MASK_FLOOR,
) -> dict[str, float]:
    """Per-parameter worst relative error between tape and oracle.

    Entries where both gradients are below ``mask_floor`` are skipped:
    at those coordinates the relative error of two near-zero numbers is
    dominated by finite-difference noise. A parameter whose every entry
    is masked reports 0.0.
    """
    from .tensor import backward

    for _, p in params:
        p.grad = None
    loss = fn()
    backward(loss)

    report: dict[str, float] = {}
    for name, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(fn, p, step=step)
        mask = np.maximum(np.abs(analytic), np.abs(numeric)) > mask_floor
        if not mask.any():
            report[name] = 0.0
            continue
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
        err = np.abs(analytic - numeric) / denom
        report[name] = float(err[mask].max())
    return report
