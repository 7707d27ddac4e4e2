"""Particle dataset schema, CSV I/O, standardization, splitting and the synthetic oracle.

A dataset is held columnar: one float64 row per particle in the CSV column
order (47 features followed by 27 label values), plus the flow-regime index
of every row, which survives standardization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

REYNOLDS = (10.0, 50.0, 100.0, 200.0)
SOLID_FRACTIONS = (0.1, 0.2, 0.3, 0.35)

N_NEIGHBORS = 15
FIELD_POINTS = 10

FEATURE_COLUMNS = (
    [f"x{i}" for i in range(1, 16)]
    + [f"y{i}" for i in range(1, 16)]
    + [f"z{i}" for i in range(1, 16)]
    + ["Re", "phi"]
)
LABEL_COLUMNS = (
    ["Fx"]
    + [f"p{i}" for i in range(1, 11)]
    + [f"v{i}" for i in range(1, 11)]
    + ["FPx", "FPy", "FPz", "FSx", "FSy", "FSz"]
)
COLUMNS = FEATURE_COLUMNS + LABEL_COLUMNS

N_FEATURES = len(FEATURE_COLUMNS)  # 47
RE_COL, PHI_COL = 45, 46
DRAG_COL = 47
PRESSURE_COLS = slice(48, 58)
VELOCITY_COLS = slice(58, 68)
PRESSURE_COMPONENT_COLS = slice(68, 71)
SHEAR_COMPONENT_COLS = slice(71, 74)


class FlowRegime(NamedTuple):
    reynolds: float
    solid_fraction: float

    def __str__(self):
        return f"Re={self.reynolds:g},phi={self.solid_fraction:g}"


REGIMES = tuple(FlowRegime(re, phi) for re in REYNOLDS for phi in SOLID_FRACTIONS)
REGIME_INDEX = {r: i for i, r in enumerate(REGIMES)}


class DataError(ValueError):
    pass


def regime_index_of(reynolds: float, solid_fraction: float) -> int:
    try:
        return REGIME_INDEX[FlowRegime(float(reynolds), float(solid_fraction))]
    except KeyError:
        raise DataError(
            f"(Re={reynolds}, phi={solid_fraction}) is not one of the 16 flow regimes"
        ) from None


@dataclass(frozen=True)
class ParticleSample:
    neighbor_x: np.ndarray
    neighbor_y: np.ndarray
    neighbor_z: np.ndarray
    reynolds: float
    solid_fraction: float
    drag_x: float
    pressure_field: np.ndarray
    velocity_field: np.ndarray
    pressure_component: np.ndarray
    shear_component: np.ndarray

    @property
    def regime(self) -> FlowRegime:
        return FlowRegime(self.reynolds, self.solid_fraction)

    def features(self) -> np.ndarray:
        return np.concatenate([self.neighbor_x, self.neighbor_y, self.neighbor_z,
                               [self.reynolds, self.solid_fraction]])

    def row(self) -> np.ndarray:
        return np.concatenate([self.features(), [self.drag_x], self.pressure_field,
                               self.velocity_field, self.pressure_component, self.shear_component])


@dataclass
class ParticleDataset:
    table: np.ndarray
    regime_index: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64).reshape(-1, len(COLUMNS))
        self.regime_index = np.asarray(self.regime_index, dtype=np.int64)
        if self.regime_index.shape != (len(self.table),):
            raise DataError("regime_index length does not match table rows")

    @classmethod
    def from_table(cls, table) -> "ParticleDataset":
        """Build from raw (unstandardized) rows, validating the regime columns."""
        table = np.asarray(table, dtype=np.float64).reshape(-1, len(COLUMNS))
        idx = np.array([regime_index_of(re, phi) for re, phi in table[:, [RE_COL, PHI_COL]]],
                       dtype=np.int64)
        return cls(table, idx)

    @classmethod
    def from_samples(cls, samples) -> "ParticleDataset":
        return cls.from_table(np.array([s.row() for s in samples]).reshape(-1, len(COLUMNS)))

    def __len__(self):
        return len(self.table)

    def __getitem__(self, i: int) -> ParticleSample:
        if self.standardized:
            raise DataError("per-sample access is only defined on physical-unit datasets")
        row = self.table[i]
        return ParticleSample(
            neighbor_x=row[0:15].copy(), neighbor_y=row[15:30].copy(), neighbor_z=row[30:45].copy(),
            reynolds=float(row[RE_COL]), solid_fraction=float(row[PHI_COL]),
            drag_x=float(row[DRAG_COL]),
            pressure_field=row[PRESSURE_COLS].copy(), velocity_field=row[VELOCITY_COLS].copy(),
            pressure_component=row[PRESSURE_COMPONENT_COLS].copy(),
            shear_component=row[SHEAR_COMPONENT_COLS].copy(),
        )

    def subset(self, indices) -> "ParticleDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return ParticleDataset(self.table[indices], self.regime_index[indices], self.standardized)

    @property
    def features(self):
        return self.table[:, :N_FEATURES]

    @property
    def drag(self):
        return self.table[:, DRAG_COL]

    @property
    def pressure_field(self):
        return self.table[:, PRESSURE_COLS]

    @property
    def velocity_field(self):
        return self.table[:, VELOCITY_COLS]

    @property
    def pressure_component(self):
        return self.table[:, PRESSURE_COMPONENT_COLS]

    @property
    def shear_component(self):
        return self.table[:, SHEAR_COMPONENT_COLS]

    @property
    def regimes(self) -> list[FlowRegime]:
        return [REGIMES[i] for i in self.regime_index]


# --- CSV -------------------------------------------------------------------


def write_csv(dataset: ParticleDataset, path) -> None:
    """Write physical-unit rows; ``repr`` keeps every double exact on reload."""
    if dataset.standardized:
        raise DataError("refusing to write a standardized dataset")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in dataset.table:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path) -> ParticleDataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if header != COLUMNS:
            missing = [c for c in COLUMNS if c not in header]
            if missing:
                raise DataError(f"{path}: header missing column(s) {missing}")
            raise DataError(f"{path}: header columns out of order; expected {COLUMNS}")
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(COLUMNS)} columns, got {len(cells)}")
            values = []
            for col, cell in zip(COLUMNS, cells):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col!r}: non-numeric value {cell!r}") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            try:
                regime_index_of(values[RE_COL], values[PHI_COL])
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append(values)
    return ParticleDataset.from_table(np.array(rows, dtype=np.float64).reshape(-1, len(COLUMNS)))


# --- standardization --------------------------------------------------------


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    provenance: str = "train"

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64),
                   doc.get("provenance", "train"))

    def column(self, cols):
        return self.mean[cols], self.std[cols]


def fit_standardization(train: ParticleDataset, provenance: str = "train") -> StandardizationStats:
    if len(train) == 0:
        raise DataError("cannot fit standardization on an empty training split")
    if train.standardized:
        raise DataError("fit_standardization expects physical-unit data")
    mean = train.table.mean(axis=0)
    std = train.table.std(axis=0)
    const = [COLUMNS[i] for i in np.flatnonzero(~(std > 0))]
    if const:
        raise DataError(f"constant column(s) in training split: {const}")
    return StandardizationStats(mean, std, provenance)


def apply_standardization(data: ParticleDataset, stats: StandardizationStats,
                          direction: str = "forward") -> ParticleDataset:
    if direction == "forward":
        if data.standardized:
            raise DataError("dataset is already standardized")
        table = (data.table - stats.mean) / stats.std
    elif direction == "inverse":
        if not data.standardized:
            raise DataError("dataset is not standardized")
        table = data.table * stats.std + stats.mean
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return ParticleDataset(table, data.regime_index.copy(), direction == "forward")


# --- splitting and grouping -------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.55
    seed: int = 0
    stratify_by_regime: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def group_by_regime(data) -> dict[FlowRegime, np.ndarray]:
    """Map each regime present to the sorted row indices it owns."""
    regime_index = data.regime_index if isinstance(data, ParticleDataset) else np.asarray(data)
    return {REGIMES[k]: np.flatnonzero(regime_index == k) for k in np.unique(regime_index)}


def split_indices(data: ParticleDataset, spec: SplitSpec, rng: np.random.Generator | None = None):
    """Seeded shuffle then cut; returns sorted ``(train_idx, test_idx)``."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n = len(data)
    if not spec.stratify_by_regime:
        perm = rng.permutation(n)
        k = int(np.floor(spec.train_fraction * n))
        return np.sort(perm[:k]), np.sort(perm[k:])
    train, test = [], []
    for regime, idx in group_by_regime(data).items():
        if len(idx) < 2:
            raise DataError(f"regime {regime} has {len(idx)} sample(s); stratified split needs >= 2")
        perm = rng.permutation(idx)
        k = int(np.floor(spec.train_fraction * len(idx) + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        train.append(perm[:k])
        test.append(perm[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(data: ParticleDataset, spec: SplitSpec):
    train_idx, test_idx = split_indices(data, spec)
    return data.subset(train_idx), data.subset(test_idx)


# --- synthetic oracle -------------------------------------------------------

FIELD_POSITIONS = (np.arange(1, FIELD_POINTS + 1) - 0.5) / FIELD_POINTS


def oracle_labels(coords: np.ndarray, reynolds: np.ndarray, phi: np.ndarray):
    """Closed-form labels for neighbor coordinates of shape (n, 15, 3).

    Returns ``(pressure, velocity, pressure_component, shear_component)``;
    noiseless drag is ``pressure_component[:, 0] + shear_component[:, 0]``.
    """
    s = FIELD_POSITIONS
    dist = np.linalg.norm(coords, axis=2)
    decay = np.exp(-dist)
    crowd = decay.sum(axis=1)
    sqrt_re = np.sqrt(reynolds)
    pressure = (((1.0 + phi) * sqrt_re / 10.0) * (1.0 + crowd))[:, None] * (1.0 - 2.0 * s)
    velocity = (((1.0 - phi) * sqrt_re / 5.0) / (1.0 + crowd))[:, None] * np.sin(np.pi * s)
    yz = (coords[:, :, 1:] * decay[:, :, None]).sum(axis=1)  # (n, 2)
    fpx = 10.0 * (pressure * (1.0 - 2.0 * s)).mean(axis=1)
    fsx = 3.0 * velocity.mean(axis=1)
    pressure_component = np.column_stack([fpx, 0.1 * yz])
    shear_component = np.column_stack([fsx, 0.05 * yz])
    return pressure, velocity, pressure_component, shear_component


def synth_generate(n: int, seed: int = 0, noise_sigma: float = 0.0) -> ParticleDataset:
    """Deterministic synthetic particles with analytic labels.

    Draw order from ``default_rng(seed)``: regimes, coordinates, drag noise.
    The noise draw happens even when ``noise_sigma`` is 0, so datasets that
    differ only in noise share every other value.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    regime_idx = rng.integers(0, len(REGIMES), size=n)
    coords = rng.uniform(-2.9, 2.9, size=(n, N_NEIGHBORS, 3))
    noise = rng.normal(0.0, 1.0, size=n) * noise_sigma
    order = np.argsort(np.linalg.norm(coords, axis=2), axis=1, kind="stable")
    coords = np.take_along_axis(coords, order[:, :, None], axis=1)

    regimes = np.array(REGIMES)[regime_idx]
    re, phi = regimes[:, 0], regimes[:, 1]
    pressure, velocity, fp, fs = oracle_labels(coords, re, phi)
    drag = fp[:, 0] + fs[:, 0] + noise
    table = np.column_stack([
        coords[:, :, 0], coords[:, :, 1], coords[:, :, 2], re, phi,
        drag, pressure, velocity, fp, fs,
    ])
    return ParticleDataset(table, regime_idx.astype(np.int64))


def drag_std(n: int, seed: int = 0) -> float:
    """Population std of noiseless synthetic drag, for noise set relative to it."""
    return float(synth_generate(n, seed, 0.0).drag.std())
