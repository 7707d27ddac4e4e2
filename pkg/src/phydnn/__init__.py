"""Physics-guided multi-task network for particle drag-force prediction."""

from .data import (
    COLUMNS,
    REGIMES,
    FlowRegime,
    ParticleDataset,
    ParticleSample,
    SplitSpec,
    StandardizationStats,
    apply_standardization,
    fit_standardization,
    group_by_regime,
    load_csv,
    split,
    synth_generate,
    write_csv,
)
from .losses import LossWeights, RegimeAggregates, Targets, loss_mse, loss_phy, regime_aggregates, total_loss
from .metrics import MetricsReport, aurec, compute_metrics, improvement_table, relative_errors
from .models import MODEL_KINDS, ArchitectureConfig, Model, ModelOutput, build_model, parameter_count

__version__ = "0.1.0"
