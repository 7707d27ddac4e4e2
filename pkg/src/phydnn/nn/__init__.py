from .gradcheck import grad_check, numeric_gradient, relative_error
from .layers import (
    ACTIVATIONS,
    Conv1d,
    Dense,
    ShapeError,
    avgpool1d,
    avgpool1d_backward,
    avgpool1d_forward,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
)
from .optim import NonFiniteGradientError, adam_step
from .params import (
    FORMAT_VERSION,
    ParameterStore,
    dump_checkpoint,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)
