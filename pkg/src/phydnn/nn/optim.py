import numpy as np

from .params import ParameterStore


class NonFiniteGradientError(FloatingPointError):
    pass


def adam_step(params: ParameterStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=None):
    """One bias-corrected Adam update, in place.

    ``t`` defaults to the store's step counter plus one. Moments are kept in
    ``params.optimizer_state`` so they persist across steps and checkpoints.
    """
    state = params.optimizer_state
    if t is None:
        t = state["t"] + 1
    if t < 1:
        raise ValueError("adam step count t must be >= 1")
    for name in params:
        if not np.all(np.isfinite(params.grad(name))):
            raise NonFiniteGradientError(f"non-finite gradient in {name!r}")
    if params.frozen:
        raise RuntimeError("cannot update a frozen parameter store")

    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, value in params.items():
        g = params.grad(name)
        m = state["m"].get(name)
        if m is None:
            m = state["m"][name] = np.zeros_like(value)
            state["v"][name] = np.zeros_like(value)
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    state["t"] = t
    return params
