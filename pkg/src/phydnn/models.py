"""PhyDNN and its comparison architectures, wired from the nn layers.

Every model maps a (batch, 47) standardized feature matrix to a
:class:`ModelOutput`. ``forward_with_tape`` additionally returns the caches
that ``backward`` needs; ``forward`` keeps nothing, so a frozen model can
serve concurrent callers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .data import FIELD_POINTS, N_FEATURES, REGIMES
from .nn import Conv1d, Dense, ParameterStore
from .nn.layers import avgpool1d_backward, avgpool1d_forward

MODEL_KINDS = (
    "phydnn",
    "phydnn_fx_only",
    "dnn",
    "dnn_plus_pres",
    "dnn_plus_vel",
    "dnn_mt_pres",
    "dnn_mt_vel",
    "mean_baseline",
    "linear_regression",
)
NEURAL_KINDS = MODEL_KINDS[:7]
CLOSED_FORM_KINDS = ("mean_baseline", "linear_regression")
# kinds whose single output vector is trained as one unweighted MSE
JOINT_OUTPUT_KINDS = ("dnn_plus_pres", "dnn_plus_vel")
COMPONENT_KINDS = ("phydnn", "phydnn_fx_only")


@dataclass(frozen=True)
class ArchitectureConfig:
    input_dim: int = N_FEATURES
    hidden_width: int = 128
    shared_layers: int = 4
    field_dim: int = FIELD_POINTS
    conv_channels: int = 4
    conv_kernel: int = 3
    conv_padding: int = 1
    pool_window: int = 10
    component_dim: int = 3
    hidden_activation: str = "relu"
    # dnn_mt_*: shared relu layers, then this many task-specific relu layers
    mt_task_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.input_dim != N_FEATURES:
            raise ValueError(f"input_dim is fixed at {N_FEATURES}")
        if self.field_dim != FIELD_POINTS:
            raise ValueError(f"field heads output exactly {FIELD_POINTS} values")
        if self.hidden_width < 1 or self.shared_layers < 1:
            raise ValueError("hidden_width and shared_layers must be >= 1")
        conv_len = self.field_dim + 2 * self.conv_padding - self.conv_kernel + 1
        if conv_len < 1 or conv_len % self.pool_window:
            raise ValueError(f"pool window {self.pool_window} does not divide conv length {conv_len}")
        if not 1 <= self.mt_task_layers < self.shared_layers + 1:
            raise ValueError("mt_task_layers must be in [1, shared_layers]")

    @property
    def pooled_dim(self) -> int:
        conv_len = self.field_dim + 2 * self.conv_padding - self.conv_kernel + 1
        return self.conv_channels * (conv_len // self.pool_window)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in names})


@dataclass
class ModelOutput:
    drag: np.ndarray
    pressure_field: np.ndarray | None = None
    velocity_field: np.ndarray | None = None
    pressure_component: np.ndarray | None = None
    shear_component: np.ndarray | None = None

    BLOCKS = ("pressure_field", "velocity_field", "pressure_component", "shear_component")

    def __len__(self):
        return len(self.drag)

    def rows(self) -> list["ModelOutput"]:
        """Split into one single-sample output per row."""
        out = []
        for i in range(len(self.drag)):
            out.append(ModelOutput(
                self.drag[i:i + 1],
                *(None if getattr(self, b) is None else getattr(self, b)[i:i + 1] for b in self.BLOCKS),
            ))
        return out

    def zeros_like(self) -> "ModelOutput":
        return ModelOutput(
            np.zeros_like(self.drag),
            *(None if getattr(self, b) is None else np.zeros_like(getattr(self, b)) for b in self.BLOCKS),
        )


class Model:
    """A built network: its kind, config, parameters and layer wiring."""

    def __init__(self, kind: str, config: ArchitectureConfig, params: ParameterStore | None = None):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        self.kind = kind
        self.config = config
        self._build_layers()
        if params is None:
            params = ParameterStore()
            rng = np.random.default_rng(config.seed)
            for layer in self._all_layers():
                layer.init(params, rng)
            if kind == "mean_baseline":
                params.add("regime_mean", np.zeros(len(REGIMES)))
        else:
            expected = self.declared_shapes()
            got = {n: params[n].shape for n in params}
            if got != expected:
                raise ValueError(f"parameter store does not match {kind} layout")
        self.params = params

    # --- wiring ----------------------------------------------------------

    def _build_layers(self):
        c = self.config
        w, act = c.hidden_width, c.hidden_activation
        self.trunk: list[Dense] = []
        self.heads: dict[str, list[Dense]] = {}
        self.conv = None
        kind = self.kind

        def stack(prefix, n, first_in):
            return [Dense(f"{prefix}.{i}", first_in if i == 0 else w, w, act) for i in range(n)]

        if kind in COMPONENT_KINDS:
            comp = c.component_dim if kind == "phydnn" else 1
            self.trunk = stack("shared", c.shared_layers, c.input_dim)
            self.heads["pressure_field"] = [Dense("pressure_field", w, c.field_dim)]
            self.heads["velocity_field"] = [Dense("velocity_field", w, c.field_dim)]
            self.conv = Conv1d("conv", 2, c.conv_channels, c.conv_kernel, c.conv_padding)
            self.heads["pressure_component"] = [Dense("pressure_component", c.pooled_dim, comp)]
            self.heads["shear_component"] = [Dense("shear_component", c.pooled_dim, comp)]
            self.heads["drag"] = [Dense("drag", 2 * comp, 1)]
        elif kind in ("dnn", "dnn_plus_pres", "dnn_plus_vel"):
            out_dim = 1 if kind == "dnn" else 1 + c.field_dim
            self.trunk = stack("hidden", c.shared_layers + 1, c.input_dim)
            self.heads["drag"] = [Dense("output", w, out_dim)]
        elif kind in ("dnn_mt_pres", "dnn_mt_vel"):
            field = "pressure_field" if kind == "dnn_mt_pres" else "velocity_field"
            n_shared = c.shared_layers + 1 - c.mt_task_layers
            self.trunk = stack("shared", n_shared, c.input_dim)
            self.heads["drag"] = stack("drag_task", c.mt_task_layers, w) + [Dense("drag", w, 1)]
            self.heads[field] = stack("field_task", c.mt_task_layers, w) + [Dense(field, w, c.field_dim)]
        elif kind == "linear_regression":
            self.heads["drag"] = [Dense("linear", c.input_dim, 1)]

    def _all_layers(self):
        layers = list(self.trunk)
        order = ["pressure_field", "velocity_field", "conv", "pressure_component",
                 "shear_component", "drag"]
        for key in order:
            if key == "conv":
                if self.conv is not None:
                    layers.append(self.conv)
            else:
                layers.extend(self.heads.get(key, []))
        return layers

    def declared_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self._all_layers():
            shapes.update(layer.shapes)
        if self.kind == "mean_baseline":
            shapes["regime_mean"] = (len(REGIMES),)
        return shapes

    @property
    def joint_output(self) -> bool:
        return self.kind in JOINT_OUTPUT_KINDS

    @property
    def has_components(self) -> bool:
        return self.kind in COMPONENT_KINDS

    def parameter_count(self) -> int:
        return self.params.num_scalars()

    # --- forward / backward ----------------------------------------------

    def __call__(self, features, regime_index=None) -> ModelOutput:
        return self.forward(features, regime_index)

    def forward(self, features, regime_index=None) -> ModelOutput:
        return self.forward_with_tape(features, regime_index)[0]

    def _run(self, layers, x, tape, key):
        caches = []
        for layer in layers:
            x, cache = layer.forward(self.params, x)
            caches.append(cache)
        tape[key] = caches
        return x

    def _unrun(self, layers, grad, tape, key):
        for layer, cache in zip(reversed(layers), reversed(tape[key])):
            grad = layer.backward(self.params, cache, grad)
        return grad

    def forward_with_tape(self, features, regime_index=None):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected features of shape (batch, {self.config.input_dim}), got {x.shape}")
        tape: dict = {"batch": len(x)}
        kind = self.kind

        if kind == "mean_baseline":
            if regime_index is None:
                raise ValueError("mean_baseline needs the regime index of every row")
            idx = np.asarray(regime_index, dtype=np.int64)
            tape["regime_index"] = idx
            return ModelOutput(self.params["regime_mean"][idx].copy()), tape

        h = self._run(self.trunk, x, tape, "trunk")

        if kind in COMPONENT_KINDS:
            p = self._run(self.heads["pressure_field"], h, tape, "pressure_field")
            v = self._run(self.heads["velocity_field"], h, tape, "velocity_field")
            fp, fs, drag = self._post_field(p, v, tape)
            return ModelOutput(drag, p, v, fp, fs), tape

        if kind in ("dnn", "dnn_plus_pres", "dnn_plus_vel", "linear_regression"):
            out = self._run(self.heads["drag"], h, tape, "drag")
            if kind == "dnn_plus_pres":
                return ModelOutput(out[:, 0].copy(), pressure_field=out[:, 1:].copy()), tape
            if kind == "dnn_plus_vel":
                return ModelOutput(out[:, 0].copy(), velocity_field=out[:, 1:].copy()), tape
            return ModelOutput(out[:, 0].copy()), tape

        # dnn_mt_*
        drag = self._run(self.heads["drag"], h, tape, "drag")[:, 0].copy()
        field = "pressure_field" if kind == "dnn_mt_pres" else "velocity_field"
        f = self._run(self.heads[field], h, tape, field)
        return ModelOutput(drag, **{field: f}), tape

    def _post_field(self, p, v, tape):
        u = np.stack([p, v], axis=1)  # (B, 2 channels, 10 points)
        c, conv_cache = self.conv.forward(self.params, u)
        pooled, pool_cache = avgpool1d_forward(c, self.config.pool_window)
        q = pooled.reshape(len(p), -1)
        tape["conv"] = (conv_cache, pool_cache, pooled.shape)
        fp = self._run(self.heads["pressure_component"], q, tape, "pressure_component")
        fs = self._run(self.heads["shear_component"], q, tape, "shear_component")
        drag = self._run(self.heads["drag"], np.concatenate([fp, fs], axis=1), tape, "drag")
        return fp, fs, drag[:, 0].copy()

    def post_field(self, pressure_field, velocity_field):
        """Map field activations to ``(pressure_component, shear_component, drag)``."""
        if not self.has_components:
            raise ValueError(f"{self.kind} has no post-field layers")
        return self._post_field(np.asarray(pressure_field, float), np.asarray(velocity_field, float), {})

    def from_components(self, pressure_component, shear_component):
        """Drag head applied to injected component values."""
        if not self.has_components:
            raise ValueError(f"{self.kind} has no component layer")
        cat = np.concatenate([np.atleast_2d(pressure_component), np.atleast_2d(shear_component)], axis=1)
        return self._run(self.heads["drag"], cat, {}, "drag")[:, 0]

    def backward(self, tape, grads: ModelOutput) -> None:
        """Accumulate parameter gradients for upstream gradients on the outputs."""
        if not tape or "batch" not in tape:
            raise RuntimeError("backward called without a forward tape")
        kind = self.kind
        b = tape["batch"]
        g_drag = np.asarray(grads.drag, dtype=np.float64).reshape(b)

        if kind == "mean_baseline":
            acc = np.zeros(len(REGIMES))
            np.add.at(acc, tape["regime_index"], g_drag)
            self.params.accumulate("regime_mean", acc)
            return

        if kind in COMPONENT_KINDS:
            g_cat = self._unrun(self.heads["drag"], g_drag[:, None], tape, "drag")
            comp = g_cat.shape[1] // 2
            g_fp, g_fs = g_cat[:, :comp], g_cat[:, comp:]
            if grads.pressure_component is not None:
                g_fp = g_fp + grads.pressure_component
            if grads.shear_component is not None:
                g_fs = g_fs + grads.shear_component
            g_q = (self._unrun(self.heads["pressure_component"], g_fp, tape, "pressure_component")
                   + self._unrun(self.heads["shear_component"], g_fs, tape, "shear_component"))
            conv_cache, pool_cache, pooled_shape = tape["conv"]
            g_c = avgpool1d_backward(g_q.reshape(pooled_shape), pool_cache)
            g_u = self.conv.backward(self.params, conv_cache, g_c)
            g_p, g_v = g_u[:, 0, :], g_u[:, 1, :]
            if grads.pressure_field is not None:
                g_p = g_p + grads.pressure_field
            if grads.velocity_field is not None:
                g_v = g_v + grads.velocity_field
            g_h = (self._unrun(self.heads["pressure_field"], g_p, tape, "pressure_field")
                   + self._unrun(self.heads["velocity_field"], g_v, tape, "velocity_field"))
        elif kind in ("dnn", "linear_regression"):
            g_h = self._unrun(self.heads["drag"], g_drag[:, None], tape, "drag")
        elif kind in JOINT_OUTPUT_KINDS:
            field = grads.pressure_field if kind == "dnn_plus_pres" else grads.velocity_field
            if field is None:
                field = np.zeros((b, self.config.field_dim))
            g_h = self._unrun(self.heads["drag"], np.column_stack([g_drag, field]), tape, "drag")
        else:
            field = "pressure_field" if kind == "dnn_mt_pres" else "velocity_field"
            g_h = self._unrun(self.heads["drag"], g_drag[:, None], tape, "drag")
            g_field = getattr(grads, field)
            if g_field is not None:
                g_h = g_h + self._unrun(self.heads[field], g_field, tape, field)

        if self.trunk:
            self._unrun(self.trunk, g_h, tape, "trunk")

    # --- closed-form fits ------------------------------------------------

    def fit_closed_form(self, features, drag, regime_index=None) -> None:
        """Least-squares / per-regime-mean fit for the non-neural kinds."""
        drag = np.asarray(drag, dtype=np.float64)
        if self.kind == "mean_baseline":
            idx = np.asarray(regime_index, dtype=np.int64)
            means = np.full(len(REGIMES), drag.mean())
            for k in np.unique(idx):
                means[k] = drag[idx == k].mean()
            self.params["regime_mean"][:] = means
        elif self.kind == "linear_regression":
            x = np.asarray(features, dtype=np.float64)
            design = np.column_stack([x, np.ones(len(x))])
            coef, *_ = np.linalg.lstsq(design, drag, rcond=None)
            self.params["linear.weight"][:, 0] = coef[:-1]
            self.params["linear.bias"][0] = coef[-1]
        else:
            raise ValueError(f"{self.kind} is trained by gradient descent, not fitted")

    def with_params(self, params: ParameterStore) -> "Model":
        return Model(self.kind, self.config, params)


def build_model(kind: str, config: ArchitectureConfig | None = None) -> Model:
    return Model(kind, config or ArchitectureConfig())


def parameter_count(model: Model) -> int:
    return model.parameter_count()


def replace_config(config: ArchitectureConfig, **changes) -> ArchitectureConfig:
    return replace(config, **changes)
