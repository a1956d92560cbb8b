"""Central finite-difference checks against taped gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    name: str
    max_abs_error: float
    max_rel_error: float
    passed: bool


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-3) -> np.ndarray:
    """d fn() / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            out[i] = (up - down) / (2 * step)
    return grad


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor] | dict,
                    step: float = 1e-3, rtol: float = 1e-4, atol: float = 1e-6) -> list:
    """Compare analytic and numerical gradients for every tensor in ``params``.

    An element passes when ``|analytic - numeric| <= max(rtol * max(|a|, |n|), atol)``.
    """
    named = params.items() if isinstance(params, dict) else ((f"p{i}", p) for i, p in enumerate(params))
    named = list(named)
    for _, p in named:
        p.zero_grad()
    loss = fn()
    backward(loss)
    results = []
    for name, p in named:
        analytic = np.zeros_like(p.data, dtype=np.float64) if p.grad is None else p.grad.astype(np.float64)
        numeric = numerical_grad(fn, p, step)
        diff = np.abs(analytic - numeric)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        ok = diff <= np.maximum(rtol * scale, atol)
        rel = diff / np.maximum(scale, atol)
        results.append(GradCheckResult(name, float(diff.max(initial=0.0)),
                                       float(rel.max(initial=0.0)), bool(ok.all())))
    return results
