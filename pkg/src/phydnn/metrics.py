"""Drag-force metrics (MSE, MRE, AU-REC) and the physics diagnostics.

All inputs here are in physical units. Relative errors divide by the
training-split mean drag of the sample's flow regime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import REGIMES, FlowRegime, group_by_regime
from .losses import RegimeAggregates

DEFAULT_AUREC_BOUND = 1.0


class ProvenanceError(RuntimeError):
    pass


def _check_train_aggregates(aggregates: RegimeAggregates):
    if aggregates.provenance != "train":
        raise ProvenanceError(f"metrics need training-split aggregates, got {aggregates.provenance!r}")
    if aggregates.space != "physical":
        raise ValueError("metrics need physical-unit aggregates")


def relative_errors(pred, truth, regime_index, aggregates: RegimeAggregates) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    regime_index = np.asarray(regime_index)
    denom = np.empty(len(truth))
    for k in np.unique(regime_index):
        regime = REGIMES[k]
        if regime not in aggregates:
            raise KeyError(f"no mean drag stored for regime {regime}")
        mean_drag = aggregates.mean_drag[regime]
        if not mean_drag > 0:
            raise ValueError(f"regime {regime} has non-positive mean drag {mean_drag}")
        denom[regime_index == k] = mean_drag
    return np.abs(pred - truth) / denom


@dataclass
class RelErrorCurve:
    thresholds: np.ndarray
    cdf: np.ndarray
    bound: float


def rel_error_curve(rel_errors, bound=DEFAULT_AUREC_BOUND, points=101) -> RelErrorCurve:
    r = np.sort(np.asarray(rel_errors, dtype=np.float64))
    t = np.linspace(0.0, bound, points)
    cdf = np.searchsorted(r, t, side="right") / len(r)
    return RelErrorCurve(t, cdf, bound)


def aurec(rel_errors, bound=DEFAULT_AUREC_BOUND) -> float:
    """Normalized area under the empirical CDF of relative error on [0, bound].

    The CDF is a step function, so the integral is summed exactly over the
    sorted errors.
    """
    if not bound > 0:
        raise ValueError("AU-REC bound must be > 0")
    r = np.sort(np.asarray(rel_errors, dtype=np.float64))
    n = len(r)
    if n == 0:
        raise ValueError("AU-REC of an empty error list")
    # after the i-th smallest error the CDF sits at (i+1)/n until the next error
    left = np.minimum(r, bound)
    right = np.minimum(np.append(r[1:], bound), bound)
    area = float(np.sum((np.arange(1, n + 1) / n) * (right - left)))
    return area / bound


@dataclass
class RegimeMetrics:
    mse: float
    mre: float
    aurec: float
    sample_count: int


@dataclass
class MetricsReport:
    mse: float
    mre: float
    aurec: float
    aurec_bound: float
    per_regime: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mse": self.mse,
            "mre": self.mre,
            "aurec": self.aurec,
            "aurec_bound": self.aurec_bound,
            "per_regime": [
                {"reynolds": r.reynolds, "solid_fraction": r.solid_fraction,
                 "mse": m.mse, "mre": m.mre, "aurec": m.aurec, "sample_count": m.sample_count}
                for r, m in sorted(self.per_regime.items())
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        per = {
            FlowRegime(float(d["reynolds"]), float(d["solid_fraction"])):
                RegimeMetrics(d["mse"], d["mre"], d["aurec"], int(d["sample_count"]))
            for d in doc.get("per_regime", [])
        }
        return cls(doc["mse"], doc["mre"], doc["aurec"], doc["aurec_bound"], per)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_text(self) -> str:
        lines = [
            f"{'scope':<20}{'n':>7}{'mse':>14}{'mre(%)':>12}{'aurec':>10}",
        ]
        total = sum(m.sample_count for m in self.per_regime.values())
        lines.append(f"{'all':<20}{total:>7}{self.mse:>14.6g}{self.mre:>12.4f}{self.aurec:>10.5f}")
        for r, m in sorted(self.per_regime.items()):
            lines.append(f"{str(r):<20}{m.sample_count:>7}{m.mse:>14.6g}{m.mre:>12.4f}{m.aurec:>10.5f}")
        lines.append(f"AU-REC bound T = {self.aurec_bound:g}")
        return "\n".join(lines) + "\n"


def compute_metrics(pred, truth, regime_index, aggregates: RegimeAggregates,
                    bound=DEFAULT_AUREC_BOUND) -> MetricsReport:
    _check_train_aggregates(aggregates)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    regime_index = np.asarray(regime_index)
    if len(pred) == 0 or len(pred) != len(truth):
        raise ValueError(f"need matching non-empty predictions and truths ({len(pred)} vs {len(truth)})")
    rel = relative_errors(pred, truth, regime_index, aggregates)
    sq = (pred - truth) ** 2
    per = {}
    for regime, idx in group_by_regime(regime_index).items():
        per[regime] = RegimeMetrics(float(sq[idx].mean()), float(100.0 * rel[idx].mean()),
                                    aurec(rel[idx], bound), int(len(idx)))
    return MetricsReport(float(sq.mean()), float(100.0 * rel.mean()), aurec(rel, bound), bound, per)


def improvement_table(aurec_by_model: dict, reference_model) -> dict:
    """Percent change in AU-REC of every model relative to the reference."""
    if reference_model not in aurec_by_model:
        raise KeyError(f"reference model {reference_model!r} missing")
    ref = aurec_by_model[reference_model]
    if ref == 0:
        raise ZeroDivisionError("reference AU-REC is 0")
    return {m: 100.0 * (a - ref) / ref for m, a in aurec_by_model.items()}


@dataclass
class RatioGrid:
    ratio: dict
    excluded: dict


def pressure_shear_ratio(pressure_component, shear_component, regime_index, floor=1e-12) -> RatioGrid:
    """Per regime, mean over samples of |F_x^P| / |F_x^S|.

    Samples whose |F_x^S| is below ``floor`` are dropped and counted in
    ``excluded``.
    """
    fp = np.abs(np.asarray(pressure_component, dtype=np.float64).reshape(len(regime_index), -1)[:, 0])
    fs = np.abs(np.asarray(shear_component, dtype=np.float64).reshape(len(regime_index), -1)[:, 0])
    ratio, excluded = {}, {}
    for regime, idx in group_by_regime(np.asarray(regime_index)).items():
        ok = idx[fs[idx] >= floor]
        excluded[regime] = int(len(idx) - len(ok))
        ratio[regime] = float(np.mean(fp[ok] / fs[ok])) if len(ok) else float("nan")
    return RatioGrid(ratio, excluded)


@dataclass
class FieldHistogram:
    edges: np.ndarray
    density: dict
    clamped: dict


def field_histogram(field_values, regime_index, bins=64, value_range=None) -> FieldHistogram:
    """Per-regime histogram over all field points, normalized to sum 1.

    Every regime shares the same bin edges. Values outside ``value_range``
    are clamped into the edge bins and counted in ``clamped``.
    """
    values = np.asarray(field_values, dtype=np.float64)
    values = values.reshape(len(regime_index), -1)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo, hi = value_range if value_range is not None else (float(values.min()), float(values.max()))
    if not lo < hi:
        if value_range is not None:
            raise ValueError("histogram range needs lo < hi")
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    density, clamped = {}, {}
    for regime, idx in group_by_regime(np.asarray(regime_index)).items():
        v = values[idx].ravel()
        out = (v < lo) | (v > hi)
        pos = np.clip(np.floor((np.clip(v, lo, hi) - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)
        counts = np.bincount(pos, minlength=bins).astype(np.float64)
        density[regime] = counts / counts.sum()
        clamped[regime] = int(out.sum())
    return FieldHistogram(edges, density, clamped)


def regime_mean_gap(field_pred, regime_index, stored_means: dict) -> dict:
    """|mean prediction over a regime's rows and points - stored regime mean|."""
    field_pred = np.asarray(field_pred, dtype=np.float64)
    return {
        regime: abs(float(field_pred[idx].mean()) - stored_means[regime])
        for regime, idx in group_by_regime(np.asarray(regime_index)).items()
    }
