"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from dialoglab.numerics.tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-8)`` elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float, coords=None) -> np.ndarray:
    flat = x.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * h)
    return out.reshape(x.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = x.grad.copy()
    numeric = numeric_grad(lambda: f(x), x, h)
    return float(relative_error(analytic, numeric).max(initial=0.0))


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Check every parameter tensor that ``loss_fn`` closes over.

    ``max_coords`` caps how many coordinates are probed per tensor (sampled
    without replacement from a seeded generator); ``None`` probes all of them.
    Returns the max relative error per tensor name.
    """
    named = dict(params) if isinstance(params, dict) else {str(i): p for i, p in enumerate(params)}
    for p in named.values():
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in named.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        numeric = numeric_grad(loss_fn, p, h, coords)
        err = relative_error(analytic, numeric).reshape(-1)
        if coords is not None:
            err = err[coords]
        report[name] = float(err.max(initial=0.0))
    return report
