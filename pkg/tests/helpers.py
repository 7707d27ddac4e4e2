"""Shared builders for the model/loss/gradient tests."""

import numpy as np

from phydnn.data import REGIMES
from phydnn.losses import LossWeights, RegimeAggregates, Targets, total_loss
from phydnn.nn.layers import DenseCache


def random_targets(rng, n, component_width=3):
    return Targets(
        drag=rng.normal(size=n),
        pressure_field=rng.normal(size=(n, 10)),
        velocity_field=rng.normal(size=(n, 10)),
        pressure_component=rng.normal(size=(n, 3))[:, :max(component_width, 3)],
        shear_component=rng.normal(size=(n, 3)),
        regime_index=rng.integers(0, len(REGIMES), size=n),
    )


def random_aggregates(rng):
    return RegimeAggregates(
        {r: float(rng.normal()) for r in REGIMES},
        {r: float(rng.normal()) for r in REGIMES},
        {r: float(rng.uniform(1, 5)) for r in REGIMES},
        {r: 10 for r in REGIMES},
    )


def _relu_caches(tape):
    for value in tape.values():
        items = value if isinstance(value, list) else []
        for cache in items:
            if isinstance(cache, DenseCache) and cache.activation == "relu":
                yield cache


def kink_free_features(model, rng, n, margin=1e-3):
    """Features whose relu pre-activations all stay `margin` away from zero."""
    x = rng.normal(size=(n, 47))
    for _ in range(2000):
        _, tape = model.forward_with_tape(x, rng.integers(0, 16, size=n))
        bad = np.zeros(n, dtype=bool)
        for cache in _relu_caches(tape):
            bad |= np.any(np.abs(cache.z) < margin, axis=1)
        if not bad.any():
            return x
        x[bad] = rng.normal(size=(int(bad.sum()), 47))
    raise AssertionError("could not draw kink-free features")


def loss_closure(model, x, targets, weights=None, aggregates=None, use_phy=True):
    weights = weights or LossWeights(0.3, 0.2, 0.5, 0.7)

    def run():
        out, tape = model.forward_with_tape(x, targets.regime_index)
        value, grads = total_loss(out, targets, weights, aggregates, use_phy and aggregates is not None,
                                  joint=model.joint_output, return_grad=True)
        model.backward(tape, grads)
        return value

    return run
