import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_aggregates, random_targets
from phydnn.data import REGIMES
from phydnn.losses import (
    LossWeights,
    RegimeAggregates,
    Targets,
    loss_joint_mse,
    loss_mse,
    loss_phy,
    regime_aggregates,
    total_loss,
)
from phydnn.models import ModelOutput
from phydnn.nn import numeric_gradient


def full_output(rng, n, width=3):
    return ModelOutput(rng.normal(size=n), rng.normal(size=(n, 10)), rng.normal(size=(n, 10)),
                       rng.normal(size=(n, width)), rng.normal(size=(n, width)))


def as_output(t: Targets):
    return ModelOutput(t.drag.copy(), t.pressure_field.copy(), t.velocity_field.copy(),
                       t.pressure_component.copy(), t.shear_component.copy())


def matched_aggregates(t: Targets):
    mp, mv = {}, {}
    for k in np.unique(t.regime_index):
        rows = t.regime_index == k
        mp[REGIMES[k]] = float(t.pressure_field[rows].mean())
        mv[REGIMES[k]] = float(t.velocity_field[rows].mean())
    return RegimeAggregates(mp, mv, {r: 1.0 for r in mp}, {r: 1 for r in mp})


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda_FP, w.lambda_FS) == (0.01, 0.01)
    with pytest.raises(ValueError):
        LossWeights(lambda_P=-1e-3)


def test_mse_zero_on_labels():
    t = random_targets(np.random.default_rng(0), 6)
    assert loss_mse(as_output(t), t, LossWeights(1, 1, 1, 1)) == 0.0


def test_mse_zero_weights_is_drag_mse():
    rng = np.random.default_rng(1)
    t, out = random_targets(rng, 5), full_output(rng, 5)
    assert loss_mse(out, t, LossWeights(0, 0, 0, 0)) == np.mean((out.drag - t.drag) ** 2)


def test_mse_hand_example():
    t = Targets(np.array([1.0]), np.ones((1, 10)), np.zeros((1, 10)), np.zeros((1, 3)), np.zeros((1, 3)),
                np.array([0]))
    out = ModelOutput(np.array([0.0]), np.zeros((1, 10)), np.zeros((1, 10)), np.zeros((1, 3)), np.zeros((1, 3)))
    assert loss_mse(out, t, LossWeights(0.1, 0, 0, 0)) == pytest.approx(1.1, abs=1e-15)


def test_mse_missing_blocks_ignore_their_weight():
    rng = np.random.default_rng(2)
    t = random_targets(rng, 4)
    out = ModelOutput(rng.normal(size=4))
    assert loss_mse(out, t, LossWeights(5, 5, 5, 5)) == np.mean((out.drag - t.drag) ** 2)


def test_mse_misaligned_rejected():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        loss_mse(full_output(rng, 3), random_targets(rng, 4), LossWeights())


def test_doubling_weights_doubles_auxiliary_part():
    rng = np.random.default_rng(4)
    t, out = random_targets(rng, 7), full_output(rng, 7)
    w = LossWeights(0.25, 0.5, 0.125, 2.0)
    base = loss_mse(out, t, LossWeights(0, 0, 0, 0))
    assert loss_mse(out, t, w.scaled(2)) - base == 2 * (loss_mse(out, t, w) - base)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_mse_convex_in_outputs(seed, alpha):
    rng = np.random.default_rng(seed)
    t, u, v = random_targets(rng, 4), full_output(rng, 4), full_output(rng, 4)
    w = LossWeights(0.3, 0.2, 0.5, 0.7)
    mix = ModelOutput(alpha * u.drag + (1 - alpha) * v.drag,
                      *(alpha * getattr(u, b) + (1 - alpha) * getattr(v, b) for b in ModelOutput.BLOCKS))
    lhs = loss_mse(mix, t, w)
    rhs = alpha * loss_mse(u, t, w) + (1 - alpha) * loss_mse(v, t, w)
    assert lhs >= 0 and lhs <= rhs + 1e-12


def test_mse_x_only_heads_use_x_column():
    rng = np.random.default_rng(5)
    t = random_targets(rng, 3)
    out = ModelOutput(t.drag.copy(), None, None, t.pressure_component[:, :1].copy(),
                      t.shear_component[:, :1].copy())
    assert loss_mse(out, t, LossWeights(1, 1, 1, 1)) == 0.0


def test_phy_zero_on_matched_means():
    t = random_targets(np.random.default_rng(6), 12)
    assert loss_phy(as_output(t), t, matched_aggregates(t)) == pytest.approx(0.0, abs=1e-28)


def test_phy_hand_example():
    r = REGIMES[3]
    t = Targets(np.zeros(2), np.zeros((2, 10)), np.zeros((2, 10)), np.zeros((2, 3)), np.zeros((2, 3)),
                np.array([3, 3]))
    out = ModelOutput(np.zeros(2), np.ones((2, 10)), np.ones((2, 10)))
    agg = RegimeAggregates({r: 0.5}, {r: 0.5}, {r: 1.0}, {r: 2})
    assert loss_phy(out, t, agg) == 0.5


def test_phy_unknown_regime_rejected():
    rng = np.random.default_rng(7)
    t = random_targets(rng, 4)
    t.regime_index[:] = 0
    agg = RegimeAggregates({REGIMES[1]: 0.0}, {REGIMES[1]: 0.0}, {REGIMES[1]: 1.0}, {REGIMES[1]: 1})
    with pytest.raises(KeyError):
        loss_phy(full_output(rng, 4), t, agg)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_phy_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    t, out, agg = random_targets(rng, 9), full_output(rng, 9), random_aggregates(rng)
    perm = rng.permutation(9)
    shuffled = ModelOutput(out.drag[perm], *(getattr(out, b)[perm] for b in ModelOutput.BLOCKS))
    assert loss_phy(shuffled, t.subset(perm), agg) == pytest.approx(loss_phy(out, t, agg), rel=1e-13)


def test_phy_zero_on_labels_from_training_aggregates():
    from phydnn.data import apply_standardization, fit_standardization, synth_generate

    data = synth_generate(400, 0)
    z = apply_standardization(data, fit_standardization(data))
    t = Targets.from_dataset(z)
    assert loss_phy(as_output(t), t, regime_aggregates(z)) == pytest.approx(0.0, abs=1e-28)


def test_total_loss_flag_and_zero():
    rng = np.random.default_rng(8)
    t, out = random_targets(rng, 6), full_output(rng, 6)
    w = LossWeights()
    agg = random_aggregates(rng)
    assert total_loss(out, t, w, agg, use_phy=False) == loss_mse(out, t, w)
    assert total_loss(out, t, w, agg, use_phy=True) == loss_mse(out, t, w) + loss_phy(out, t, agg)
    assert total_loss(as_output(t), t, w, matched_aggregates(t), use_phy=True) == pytest.approx(0, abs=1e-28)


def test_total_loss_requires_standardized_aggregates():
    rng = np.random.default_rng(9)
    t, out = random_targets(rng, 3), full_output(rng, 3)
    agg = random_aggregates(rng)
    agg.space = "physical"
    with pytest.raises(ValueError):
        total_loss(out, t, LossWeights(), agg, use_phy=True)
    with pytest.raises(ValueError):
        total_loss(out, t, LossWeights(), None, use_phy=True)


def test_joint_mse_is_unweighted_over_eleven_outputs():
    rng = np.random.default_rng(10)
    t = random_targets(rng, 5)
    out = ModelOutput(rng.normal(size=5), rng.normal(size=(5, 10)))
    expect = np.mean((np.column_stack([out.drag, out.pressure_field])
                      - np.column_stack([t.drag, t.pressure_field])) ** 2)
    assert loss_joint_mse(out, t) == pytest.approx(expect, rel=1e-15)


@pytest.mark.parametrize("joint", [False, True])
def test_loss_gradients_match_finite_differences(joint):
    rng = np.random.default_rng(11)
    t = random_targets(rng, 5)
    out = full_output(rng, 5) if not joint else ModelOutput(rng.normal(size=5), None, rng.normal(size=(5, 10)))
    agg = random_aggregates(rng)
    w = LossWeights(0.3, 0.2, 0.5, 0.7)
    _, grads = total_loss(out, t, w, agg, use_phy=True, phy_weight=0.7, joint=joint, return_grad=True)
    for block in ("drag",) + ModelOutput.BLOCKS:
        value = getattr(out, block)
        if value is None:
            continue
        num = numeric_gradient(lambda: total_loss(out, t, w, agg, use_phy=True, phy_weight=0.7, joint=joint),
                               value)
        np.testing.assert_allclose(getattr(grads, block), num, rtol=1e-6, atol=1e-9)


def test_aggregates_dict_round_trip():
    agg = regime_aggregates(__import__("phydnn").synth_generate(200, 1))
    back = RegimeAggregates.from_dict(agg.to_dict())
    assert back == agg
