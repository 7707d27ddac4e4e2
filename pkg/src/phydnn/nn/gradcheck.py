from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterStore


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], float], x: np.ndarray, epsilon=1e-4, indices=None) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x``, perturbed in place.

    Only ``indices`` (flat positions) are evaluated when given; other slots
    stay NaN.
    """
    flat = x.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = f()
        flat[i] = orig - epsilon
        lo = f()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * epsilon)
    return out.reshape(x.shape)


def grad_check(loss_and_grad: Callable[[], float], params: ParameterStore, epsilon=1e-4,
               max_per_entry: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must be deterministic, return the scalar loss and leave
    the analytic gradient in ``params`` (it is called once with gradients
    zeroed, then repeatedly for the finite differences). With
    ``max_per_entry`` only that many randomly chosen coordinates of each
    entry are perturbed.
    """
    params.zero_grad()
    loss_and_grad()
    analytic = {name: params.grad(name).copy() for name in params}
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, value in params.items():
        if max_per_entry is None or value.size <= max_per_entry:
            idx = None
        else:
            idx = np.sort(rng.choice(value.size, size=max_per_entry, replace=False))
        numeric = numeric_gradient(loss_and_grad, value, epsilon, idx)
        a, n = analytic[name].reshape(-1), numeric.reshape(-1)
        if idx is not None:
            a, n = a[idx], n[idx]
        if a.size:
            worst = max(worst, float(relative_error(a, n).max()))
    params.zero_grad()
    return worst
