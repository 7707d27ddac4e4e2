"""Multi-task empirical loss, aggregate-supervision loss, and their sum.

Each loss returns a float, or ``(float, ModelOutput)`` with the gradient
with respect to every output block when ``return_grad`` is set. Labels come
as a :class:`Targets` batch in the same (standardized) space as the outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import REGIMES, FlowRegime, ParticleDataset, group_by_regime
from .models import ModelOutput


@dataclass(frozen=True)
class LossWeights:
    lambda_P: float = 1e-4
    lambda_V: float = 1e-3
    lambda_FP: float = 0.01
    lambda_FS: float = 0.01

    def __post_init__(self):
        for name in ("lambda_P", "lambda_V", "lambda_FP", "lambda_FS"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(self.lambda_P * factor, self.lambda_V * factor,
                           self.lambda_FP * factor, self.lambda_FS * factor)

    def for_block(self, block: str) -> float:
        return {
            "pressure_field": self.lambda_P,
            "velocity_field": self.lambda_V,
            "pressure_component": self.lambda_FP,
            "shear_component": self.lambda_FS,
        }[block]


@dataclass
class Targets:
    drag: np.ndarray
    pressure_field: np.ndarray
    velocity_field: np.ndarray
    pressure_component: np.ndarray
    shear_component: np.ndarray
    regime_index: np.ndarray

    @classmethod
    def from_dataset(cls, data: ParticleDataset) -> "Targets":
        return cls(data.drag, data.pressure_field, data.velocity_field,
                   data.pressure_component, data.shear_component, data.regime_index)

    def __len__(self):
        return len(self.drag)

    def subset(self, idx) -> "Targets":
        return Targets(self.drag[idx], self.pressure_field[idx], self.velocity_field[idx],
                       self.pressure_component[idx], self.shear_component[idx], self.regime_index[idx])


@dataclass
class RegimeAggregates:
    """Per-regime means of the pressure field, velocity field and drag.

    ``space`` records whether the means are in standardized or physical
    units; ``provenance`` records which split they were computed from.
    """

    mean_pressure: dict
    mean_velocity: dict
    mean_drag: dict
    count: dict
    space: str = "standardized"
    provenance: str = "train"

    def __contains__(self, regime) -> bool:
        return regime in self.count

    def to_dict(self):
        return {
            "space": self.space,
            "provenance": self.provenance,
            "regimes": [
                {"reynolds": r.reynolds, "solid_fraction": r.solid_fraction,
                 "mean_pressure": self.mean_pressure[r], "mean_velocity": self.mean_velocity[r],
                 "mean_drag": self.mean_drag[r], "count": self.count[r]}
                for r in sorted(self.count)
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        mp, mv, md, cnt = {}, {}, {}, {}
        for item in doc["regimes"]:
            r = FlowRegime(float(item["reynolds"]), float(item["solid_fraction"]))
            mp[r], mv[r], md[r] = item["mean_pressure"], item["mean_velocity"], item["mean_drag"]
            cnt[r] = int(item["count"])
        return cls(mp, mv, md, cnt, doc.get("space", "standardized"), doc.get("provenance", "train"))


def regime_aggregates(data: ParticleDataset, provenance: str = "train") -> RegimeAggregates:
    mp, mv, md, cnt = {}, {}, {}, {}
    for regime, idx in group_by_regime(data).items():
        mp[regime] = float(data.pressure_field[idx].mean())
        mv[regime] = float(data.velocity_field[idx].mean())
        md[regime] = float(data.drag[idx].mean())
        cnt[regime] = int(len(idx))
    space = "standardized" if data.standardized else "physical"
    return RegimeAggregates(mp, mv, md, cnt, space, provenance)


def _check_aligned(outputs: ModelOutput, labels: Targets):
    if len(outputs.drag) != len(labels.drag):
        raise ValueError(f"{len(outputs.drag)} outputs vs {len(labels.drag)} labels")


def _label_block(labels: Targets, block: str, width: int):
    # x-only component heads (width 1) are matched to the x column
    return getattr(labels, block)[:, :width]


def loss_mse(outputs: ModelOutput, labels: Targets, weights: LossWeights, return_grad=False):
    _check_aligned(outputs, labels)
    b = len(outputs.drag)
    diff = outputs.drag - labels.drag
    value = float(np.mean(diff * diff))
    grads = outputs.zeros_like() if return_grad else None
    if return_grad:
        grads.drag = 2.0 * diff / b
    for block in ModelOutput.BLOCKS:
        pred = getattr(outputs, block)
        if pred is None:
            continue
        lam = weights.for_block(block)
        d = pred - _label_block(labels, block, pred.shape[1])
        value += lam * float(np.mean(d * d))
        if return_grad:
            setattr(grads, block, 2.0 * lam * d / d.size)
    return (value, grads) if return_grad else value


def loss_joint_mse(outputs: ModelOutput, labels: Targets, return_grad=False):
    """Unweighted MSE over the concatenated drag-plus-field output vector."""
    _check_aligned(outputs, labels)
    block = "pressure_field" if outputs.pressure_field is not None else "velocity_field"
    pred = np.column_stack([outputs.drag, getattr(outputs, block)])
    truth = np.column_stack([labels.drag, getattr(labels, block)])
    d = pred - truth
    value = float(np.mean(d * d))
    if not return_grad:
        return value
    g = 2.0 * d / d.size
    grads = outputs.zeros_like()
    grads.drag = g[:, 0].copy()
    setattr(grads, block, g[:, 1:].copy())
    return value, grads


def loss_phy(outputs: ModelOutput, labels: Targets, aggregates: RegimeAggregates, return_grad=False):
    """Squared gap between batch-level regime field means and stored regime means.

    For every regime present in the batch, the predicted pressure (velocity)
    field is averaged over that regime's rows and all field points, and
    compared to the stored training mean.
    """
    _check_aligned(outputs, labels)
    grads = outputs.zeros_like() if return_grad else None
    value = 0.0
    blocks = [(b, m) for b, m in (("pressure_field", aggregates.mean_pressure),
                                  ("velocity_field", aggregates.mean_velocity))
              if getattr(outputs, b) is not None]
    if not blocks:
        return (value, grads) if return_grad else value
    for k in np.unique(labels.regime_index):
        regime = REGIMES[k]
        if regime not in aggregates:
            raise KeyError(f"regime {regime} has no stored aggregate")
        rows = labels.regime_index == k
        for block, means in blocks:
            pred = getattr(outputs, block)[rows]
            gap = float(pred.mean()) - means[regime]
            value += gap * gap
            if return_grad:
                getattr(grads, block)[rows] += 2.0 * gap / pred.size
    return (value, grads) if return_grad else value


def _add_grads(a: ModelOutput, b: ModelOutput, scale=1.0) -> ModelOutput:
    a.drag = a.drag + scale * b.drag
    for block in ModelOutput.BLOCKS:
        gb = getattr(b, block)
        if gb is not None:
            setattr(a, block, getattr(a, block) + scale * gb)
    return a


def total_loss(outputs, labels, weights: LossWeights, aggregates: RegimeAggregates | None = None,
               use_phy=False, phy_weight=1.0, joint=False, return_grad=False):
    """``loss_mse`` (or the joint MSE) plus ``phy_weight * loss_phy`` when ``use_phy``."""
    if joint:
        res = loss_joint_mse(outputs, labels, return_grad)
    else:
        res = loss_mse(outputs, labels, weights, return_grad)
    if not use_phy:
        return res
    if aggregates is None:
        raise ValueError("use_phy requires regime aggregates")
    if aggregates.space != "standardized":
        raise ValueError("loss_phy expects standardized-space aggregates")
    phy = loss_phy(outputs, labels, aggregates, return_grad)
    if not return_grad:
        return res + phy_weight * phy
    value = res[0] + phy_weight * phy[0]
    return value, _add_grads(res[1], phy[1], phy_weight)
