"""Minimal numpy tensor engine with tape-based reverse-mode differentiation."""

from .autograd import (
    Parameter,
    Tape,
    Tensor,
    active_tape,
    backward,
    clamped_sqrt,
    concat,
    split,
    stack,
)
from .functional import (
    Padding,
    activation,
    adaptive_avg_pool,
    batch_norm1d,
    conv1d,
    conv_output_length,
    conv_transpose1d,
    cross_entropy,
    global_layer_norm,
    linear,
    pool1d,
    prelu,
    relu,
    sigmoid,
    softmax,
    tanh,
)
from .gradcheck import finite_diff_check, gradient_check
from .layers import (
    BatchNorm1d,
    Conv1d,
    ConvTranspose1d,
    GlobalLayerNorm,
    Linear,
    Module,
    ModuleList,
    PReLU,
    count_parameters,
)
