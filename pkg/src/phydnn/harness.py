"""Training pipeline and the experiment protocols (grid search, sweep, report).

Every entry point is deterministic in its config: one seed is expanded with
``numpy.random.SeedSequence`` into independent streams for the split,
weight initialization and minibatch shuffling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import data as D
from .losses import LossWeights, RegimeAggregates, Targets, regime_aggregates, total_loss
from .metrics import (
    DEFAULT_AUREC_BOUND,
    MetricsReport,
    ProvenanceError,
    compute_metrics,
    field_histogram,
    pressure_shear_ratio,
    regime_mean_gap,
    rel_error_curve,
    relative_errors,
)
from .models import CLOSED_FORM_KINDS, COMPONENT_KINDS, MODEL_KINDS, ArchitectureConfig, Model, ModelOutput
from .nn import adam_step, dump_checkpoint, parse_checkpoint

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.35, 0.45, 0.55, 0.65, 0.75, 0.85)
DEFAULT_LAMBDA_GRID = (1e-1, 1e-2, 1e-3, 1e-4)

# grid-searched (lambda_P, lambda_V) per training fraction, lambda_FP = lambda_FS = 0.01
GRID_SEARCHED_LAMBDAS = {
    0.35: (1e-2, 1e-1),
    0.45: (1e-4, 1e-1),
    0.55: (1e-4, 1e-3),
    0.65: (1e-4, 1e-1),
    0.75: (1e-2, 1e-3),
    0.85: (1e-4, 1e-2),
}

# published AU-REC column of the model comparison table
PUBLISHED_AUREC = {
    "Linear Reg.": 0.71332,
    "RF Reg.": 0.82148,
    "GB Reg.": 0.83692,
    "DNN": 0.84573,
    "DNN-MT-Pres": 0.85593,
    "DNN-MT-Vel": 0.85556,
    "PhyDNN-FxP-FxS": 0.87232,
    "PhyDNN": 0.88657,
}
PUBLISHED_IMPROVEMENT = {
    "Linear Reg.": "-19.54",
    "RF Reg.": "-7.3",
    "GB Reg.": "-5.60",
    "DNN": "-4.61",
    "DNN-MT-Pres": "-3.45",
    "DNN-MT-Vel": "-3.49",
    "PhyDNN-FxP-FxS": "-1.61",
}

# improvement-grid preset: the proposed model against these baselines
IMPROVEMENT_GRID_PRESET = ("dnn", "dnn_mt_pres", "dnn_mt_vel")


class TrainingDivergedError(FloatingPointError):
    pass


# --- configuration ------------------------------------------------------------


@dataclass
class DataSource:
    """Either a CSV path or a synthetic-oracle recipe.

    With ``noise_relative`` the drag noise std is ``noise_sigma`` times the
    std of the noiseless synthetic drag.
    """

    csv: str | None = None
    n: int = 5824
    seed: int = 0
    noise_sigma: float = 0.0
    noise_relative: bool = False

    def load(self) -> D.ParticleDataset:
        if self.csv:
            return D.load_csv(self.csv)
        sigma = self.noise_sigma
        if self.noise_relative:
            sigma *= D.drag_std(self.n, self.seed)
        return D.synth_generate(self.n, self.seed, sigma)


@dataclass
class TrainConfig:
    model: str = "phydnn"
    epochs: int = 500
    batch_size: int = 100
    hidden_width: int = 128
    learning_rate: float = 1e-3
    loss_weights: LossWeights = field(default_factory=LossWeights)
    # None: on for the physics-guided kinds, off for the rest
    use_phy: bool | None = None
    phy_weight: float = 1.0
    train_fraction: float = 0.55
    stratify_by_regime: bool = True
    seed: int = 0
    data: DataSource = field(default_factory=DataSource)
    aurec_bound: float = DEFAULT_AUREC_BOUND
    track_loss: bool = True
    architecture: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.data, dict):
            self.data = DataSource(**self.data)

    @property
    def phy_enabled(self) -> bool:
        return self.model in COMPONENT_KINDS if self.use_phy is None else bool(self.use_phy)

    def architecture_config(self) -> ArchitectureConfig:
        return ArchitectureConfig(hidden_width=self.hidden_width, seed=self.stream_seeds()[1],
                                  **{k: v for k, v in self.architecture.items() if k != "seed"})

    def stream_seeds(self) -> tuple[int, int, int]:
        split_ss, init_ss, shuffle_ss = np.random.SeedSequence(self.seed).spawn(3)
        return tuple(int(s.generate_state(1)[0]) for s in (split_ss, init_ss, shuffle_ss))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(**doc)


@dataclass
class SweepSpec:
    train_fractions: tuple = DEFAULT_FRACTIONS
    seeds: tuple = (0,)
    models: tuple = ("phydnn",)
    lambda_P_grid: tuple = DEFAULT_LAMBDA_GRID
    lambda_V_grid: tuple = DEFAULT_LAMBDA_GRID
    # "static" keeps the base config's lambdas, "grid" grid-searches them per
    # cell, "table" uses GRID_SEARCHED_LAMBDAS
    lambda_modes: tuple = ("static",)
    validation_fraction: float = 0.2

    def __post_init__(self):
        fr = [float(f) for f in self.train_fractions]
        if any(not 0 < f < 1 for f in fr) or fr != sorted(fr):
            raise ValueError("train_fractions must be ascending values in (0, 1)")
        bad = set(self.lambda_modes) - {"static", "grid", "table"}
        if bad:
            raise ValueError(f"unknown lambda mode(s) {sorted(bad)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items() if k in names})


# --- fitted model -------------------------------------------------------------


class FittedModel:
    """A trained model plus the training-split statistics it depends on."""

    def __init__(self, model: Model, stats: D.StandardizationStats, phy_aggregates: RegimeAggregates,
                 metric_aggregates: RegimeAggregates, config: TrainConfig | None = None):
        self.model = model
        self.stats = stats
        self.phy_aggregates = phy_aggregates
        self.metric_aggregates = metric_aggregates
        self.config = config
        self.history: list[float] = []

    @property
    def kind(self) -> str:
        return self.model.kind

    def standardize(self, raw: D.ParticleDataset) -> D.ParticleDataset:
        return D.apply_standardization(raw, self.stats, "forward")

    def predict_standardized(self, raw: D.ParticleDataset) -> ModelOutput:
        std = self.standardize(raw)
        return self.model.forward(std.features, std.regime_index)

    def predict(self, raw: D.ParticleDataset) -> ModelOutput:
        """Forward pass mapped back to physical units."""
        return destandardize_output(self.predict_standardized(raw), self.stats)

    def evaluate(self, raw: D.ParticleDataset, bound=None) -> tuple[MetricsReport, ModelOutput]:
        bound = bound if bound is not None else (self.config.aurec_bound if self.config else DEFAULT_AUREC_BOUND)
        if self.stats.provenance != "train":
            raise ProvenanceError("standardization stats were not fitted on a training split")
        pred = self.predict(raw)
        report = compute_metrics(pred.drag, raw.drag, raw.regime_index, self.metric_aggregates, bound)
        return report, pred

    def checkpoint_text(self) -> str:
        return dump_checkpoint(
            self.model.params,
            kind=self.kind,
            architecture=self.model.config.to_dict(),
            standardization=self.stats.to_dict(),
            phy_aggregates=self.phy_aggregates.to_dict(),
            metric_aggregates=self.metric_aggregates.to_dict(),
            train_config=self.config.to_dict() if self.config else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.checkpoint_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "FittedModel":
        store, meta = parse_checkpoint(text)
        model = Model(meta["kind"], ArchitectureConfig.from_dict(meta["architecture"]), store)
        config = TrainConfig.from_dict(meta["train_config"]) if meta.get("train_config") else None
        return cls(model, D.StandardizationStats.from_dict(meta["standardization"]),
                   RegimeAggregates.from_dict(meta["phy_aggregates"]),
                   RegimeAggregates.from_dict(meta["metric_aggregates"]), config)

    @classmethod
    def load(cls, path) -> "FittedModel":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def destandardize_output(out: ModelOutput, stats: D.StandardizationStats) -> ModelOutput:
    def back(values, cols):
        if values is None:
            return None
        mean, std = stats.column(cols)
        width = values.shape[1]
        return values * std[:width] + mean[:width]

    mean, std = stats.column(D.DRAG_COL)
    return ModelOutput(
        out.drag * std + mean,
        back(out.pressure_field, D.PRESSURE_COLS),
        back(out.velocity_field, D.VELOCITY_COLS),
        back(out.pressure_component, D.PRESSURE_COMPONENT_COLS),
        back(out.shear_component, D.SHEAR_COMPONENT_COLS),
    )


# --- training -----------------------------------------------------------------


def fit(config: TrainConfig, train_raw: D.ParticleDataset) -> FittedModel:
    """Standardize on ``train_raw``, then train (or fit in closed form) one model."""
    stats = D.fit_standardization(train_raw, provenance="train")
    train_std = D.apply_standardization(train_raw, stats)
    phy_agg = regime_aggregates(train_std, provenance="train")
    metric_agg = regime_aggregates(train_raw, provenance="train")
    model = Model(config.model, config.architecture_config())
    fitted = FittedModel(model, stats, phy_agg, metric_agg, config)

    x = train_std.features
    targets = Targets.from_dataset(train_std)
    if config.model in CLOSED_FORM_KINDS:
        model.fit_closed_form(x, targets.drag, targets.regime_index)
        return fitted

    params = model.params
    weights = config.loss_weights
    use_phy = config.phy_enabled
    rng = np.random.default_rng(config.stream_seeds()[2])
    n, bs = len(train_std), config.batch_size

    def objective(out, tgt, grad):
        return total_loss(out, tgt, weights, phy_agg, use_phy, config.phy_weight,
                          joint=model.joint_output, return_grad=grad)

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for step, start in enumerate(range(0, n, bs)):
            idx = perm[start:start + bs]
            out, tape = model.forward_with_tape(x[idx], targets.regime_index[idx])
            loss, grads = objective(out, targets.subset(idx), True)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
            params.zero_grad()
            model.backward(tape, grads)
            adam_step(params, lr=config.learning_rate)
        if config.track_loss:
            full = objective(model.forward(x, targets.regime_index), targets, False)
            if not math.isfinite(full):
                raise TrainingDivergedError(f"non-finite training loss after epoch {epoch}")
            fitted.history.append(full)
    params.zero_grad()
    return fitted


@dataclass
class TrainResult:
    fitted: FittedModel
    report: MetricsReport
    predictions: ModelOutput
    test: D.ParticleDataset
    train_idx: np.ndarray
    test_idx: np.ndarray

    def field_mean_gaps(self) -> dict:
        """Per-regime |mean predicted field - training regime mean|, standardized units."""
        pred = self.fitted.predict_standardized(self.test)
        agg = self.fitted.phy_aggregates
        gaps = {}
        if pred.pressure_field is not None:
            gaps["pressure"] = regime_mean_gap(pred.pressure_field, self.test.regime_index, agg.mean_pressure)
        if pred.velocity_field is not None:
            gaps["velocity"] = regime_mean_gap(pred.velocity_field, self.test.regime_index, agg.mean_velocity)
        return gaps


def split_for(config: TrainConfig, data: D.ParticleDataset):
    spec = D.SplitSpec(config.train_fraction, config.seed, config.stratify_by_regime)
    return D.split_indices(data, spec, np.random.default_rng(config.stream_seeds()[0]))


def train(config: TrainConfig, dataset: D.ParticleDataset | None = None) -> TrainResult:
    data = dataset if dataset is not None else config.data.load()
    train_idx, test_idx = split_for(config, data)
    test = data.subset(test_idx)
    fitted = fit(config, data.subset(train_idx))
    report, pred = fitted.evaluate(test)
    return TrainResult(fitted, report, pred, test, train_idx, test_idx)


# --- grid search --------------------------------------------------------------


@dataclass
class GridSearchResult:
    best: tuple
    rows: list


def gridsearch(config: TrainConfig, lambda_P_grid=DEFAULT_LAMBDA_GRID, lambda_V_grid=DEFAULT_LAMBDA_GRID,
               validation_fraction=0.2, dataset: D.ParticleDataset | None = None) -> GridSearchResult:
    """Pick (lambda_P, lambda_V) by validation AU-REC.

    The validation rows are carved out of the training split, so the test
    split is never touched. Ties go to the lexicographically smaller pair.
    """
    if not lambda_P_grid or not lambda_V_grid:
        raise ValueError("grid must be non-empty")
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    data = dataset if dataset is not None else config.data.load()
    train_idx, _ = split_for(config, data)
    train_raw = data.subset(train_idx)
    val_spec = D.SplitSpec(1.0 - validation_fraction, config.seed, config.stratify_by_regime)
    sub_idx, val_idx = D.split_indices(train_raw, val_spec,
                                       np.random.default_rng([config.seed, 0x7A1]))
    sub, val = train_raw.subset(sub_idx), train_raw.subset(val_idx)

    rows, best, best_score = [], None, -np.inf
    for lp in sorted(lambda_P_grid):
        for lv in sorted(lambda_V_grid):
            cfg = replace(config, loss_weights=replace(config.loss_weights, lambda_P=lp, lambda_V=lv))
            report, _ = fit(cfg, sub).evaluate(val)
            rows.append({"lambda_P": lp, "lambda_V": lv, "val_aurec": report.aurec})
            if report.aurec > best_score:
                best, best_score = (lp, lv), report.aurec
    return GridSearchResult(best, rows)


# --- sweep --------------------------------------------------------------------

SWEEP_COLUMNS = ["model", "fraction", "seed", "mse", "mre", "aurec",
                 "lambda_mode", "lambda_P", "lambda_V", "status"]


def sweep(spec: SweepSpec, base: TrainConfig, dataset: D.ParticleDataset | None = None) -> list[dict]:
    """One training run per (model, fraction, seed, lambda mode); failed cells are kept as rows."""
    data = dataset if dataset is not None else base.data.load()
    rows = []
    for model in spec.models:
        modes = spec.lambda_modes if model in COMPONENT_KINDS else ("static",)
        for frac in spec.train_fractions:
            for seed in spec.seeds:
                for mode in modes:
                    cfg = replace(base, model=model, train_fraction=float(frac), seed=int(seed))
                    row = {"model": model, "fraction": float(frac), "seed": int(seed), "lambda_mode": mode}
                    try:
                        if mode == "grid":
                            gs = gridsearch(cfg, spec.lambda_P_grid, spec.lambda_V_grid,
                                            spec.validation_fraction, data)
                            cfg = _with_lambdas(cfg, *gs.best)
                        elif mode == "table":
                            cfg = _with_lambdas(cfg, *_table_lambdas(float(frac)))
                        report = train(cfg, data).report
                        row.update(mse=report.mse, mre=report.mre, aurec=report.aurec, status="ok")
                    except Exception as exc:  # a failed cell must not end the sweep
                        log.warning("sweep cell %s failed: %s", row, exc)
                        row.update(mse=float("nan"), mre=float("nan"), aurec=float("nan"),
                                   status=f"failed: {type(exc).__name__}: {exc}")
                    row["lambda_P"] = cfg.loss_weights.lambda_P
                    row["lambda_V"] = cfg.loss_weights.lambda_V
                    rows.append(row)
    return rows


def _with_lambdas(cfg: TrainConfig, lp: float, lv: float) -> TrainConfig:
    return replace(cfg, loss_weights=replace(cfg.loss_weights, lambda_P=lp, lambda_V=lv))


def _table_lambdas(frac: float) -> tuple:
    nearest = min(GRID_SEARCHED_LAMBDAS, key=lambda f: abs(f - frac))
    return GRID_SEARCHED_LAMBDAS[nearest]


# --- report -------------------------------------------------------------------


@dataclass
class ReportBundle:
    metrics: MetricsReport
    curves: list
    aurec_grid: list
    ratio: list | None
    histograms: list
    notices: list


def build_report(fitted: FittedModel, raw: D.ParticleDataset, compare: FittedModel | None = None,
                 bins: int = 64) -> ReportBundle:
    notices = []
    metrics, pred = fitted.evaluate(raw)
    regimes = D.group_by_regime(raw)

    curves = []
    for regime, idx in regimes.items():
        order = idx[np.argsort(raw.drag[idx], kind="stable")]
        for rank, i in enumerate(order):
            curves.append({"reynolds": regime.reynolds, "solid_fraction": regime.solid_fraction,
                           "rank": rank, "row": int(i), "truth": float(raw.drag[i]),
                           "prediction": float(pred.drag[i])})

    other = compare.evaluate(raw)[0] if compare is not None else None
    aurec_grid = []
    for regime, m in sorted(metrics.per_regime.items()):
        row = {"reynolds": regime.reynolds, "solid_fraction": regime.solid_fraction,
               "aurec": m.aurec, "mre": m.mre, "mse": m.mse}
        if other is not None:
            base = other.per_regime[regime].aurec
            row["compare_aurec"] = base
            row["improvement_pct"] = 100.0 * (m.aurec - base) / base if base else float("nan")
        aurec_grid.append(row)

    ratio_rows = None
    if pred.pressure_component is None or pred.shear_component is None:
        notices.append(f"pressure/shear ratio skipped: model kind {fitted.kind} has no component heads")
    else:
        true_grid = pressure_shear_ratio(raw.pressure_component, raw.shear_component, raw.regime_index)
        pred_grid = pressure_shear_ratio(pred.pressure_component, pred.shear_component, raw.regime_index)
        ratio_rows = [
            {"reynolds": r.reynolds, "solid_fraction": r.solid_fraction,
             "true_ratio": true_grid.ratio[r], "pred_ratio": pred_grid.ratio[r],
             "true_excluded": true_grid.excluded[r], "pred_excluded": pred_grid.excluded[r]}
            for r in sorted(true_grid.ratio)
        ]

    hist_rows = []
    for name, truth, predicted in (("pressure", raw.pressure_field, pred.pressure_field),
                                   ("velocity", raw.velocity_field, pred.velocity_field)):
        lo, hi = float(truth.min()), float(truth.max())
        sources = [("truth", truth)]
        if predicted is None:
            notices.append(f"{name} histogram: model kind {fitted.kind} does not predict this field")
        else:
            sources.append(("prediction", predicted))
        for source, values in sources:
            h = field_histogram(values, raw.regime_index, bins, (lo, hi))
            for r in sorted(h.density):
                for b, dens in enumerate(h.density[r]):
                    hist_rows.append({"field": name, "source": source, "reynolds": r.reynolds,
                                      "solid_fraction": r.solid_fraction, "bin": b,
                                      "bin_lo": float(h.edges[b]), "bin_hi": float(h.edges[b + 1]),
                                      "density": float(dens), "clamped": h.clamped[r]})
    return ReportBundle(metrics, curves, aurec_grid, ratio_rows, hist_rows, notices)


# --- output writers -----------------------------------------------------------


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def write_train_outputs(result: TrainResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.fitted.save(out / "checkpoint.json")
    (out / "metrics.json").write_text(result.report.to_json(), encoding="utf-8")
    (out / "metrics.txt").write_text(result.report.to_text(), encoding="utf-8")
    write_rows(out / "history.csv",
               [{"epoch": i + 1, "train_loss": v} for i, v in enumerate(result.fitted.history)],
               ["epoch", "train_loss"])
    test = result.test
    write_rows(out / "predictions.csv", [
        {"row": int(i), "reynolds": r.reynolds, "solid_fraction": r.solid_fraction,
         "truth": float(t), "prediction": float(p)}
        for i, r, t, p in zip(result.test_idx, test.regimes, test.drag, result.predictions.drag)
    ], ["row", "reynolds", "solid_fraction", "truth", "prediction"])
    rel = relative_errors(result.predictions.drag, test.drag, test.regime_index,
                          result.fitted.metric_aggregates)
    curve = rel_error_curve(rel, result.report.aurec_bound)
    write_rows(out / "rel_error_curve.csv",
               [{"threshold": t, "cdf": c} for t, c in zip(curve.thresholds, curve.cdf)],
               ["threshold", "cdf"])


def write_report(bundle: ReportBundle, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(bundle.metrics.to_json(), encoding="utf-8")
    (out / "metrics.txt").write_text(bundle.metrics.to_text(), encoding="utf-8")
    write_rows(out / "drag_curves.csv", bundle.curves,
               ["reynolds", "solid_fraction", "rank", "row", "truth", "prediction"])
    grid_cols = ["reynolds", "solid_fraction", "aurec", "mre", "mse"]
    if bundle.aurec_grid and "compare_aurec" in bundle.aurec_grid[0]:
        grid_cols += ["compare_aurec", "improvement_pct"]
    write_rows(out / "aurec_grid.csv", bundle.aurec_grid, grid_cols)
    if bundle.ratio is not None:
        write_rows(out / "pressure_shear_ratio.csv", bundle.ratio,
                   ["reynolds", "solid_fraction", "true_ratio", "pred_ratio", "true_excluded", "pred_excluded"])
    write_rows(out / "field_histograms.csv", bundle.histograms,
               ["field", "source", "reynolds", "solid_fraction", "bin", "bin_lo", "bin_hi", "density", "clamped"])
    (out / "notices.txt").write_text("".join(n + "\n" for n in bundle.notices), encoding="utf-8")


def generate(n: int, seed: int, noise_sigma: float, out_path) -> D.ParticleDataset:
    dataset = D.synth_generate(n, seed, noise_sigma)
    D.write_csv(dataset, out_path)
    return dataset
