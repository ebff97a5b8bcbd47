"""Minimal dense-array math with reverse-mode differentiation."""

from ._array import (
    Array,
    Graph,
    add,
    as_array,
    backward,
    concat,
    default_dtype,
    div,
    exp,
    finite_checks,
    getitem,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    pad,
    power,
    precision,
    reshape,
    set_default_dtype,
    sqrt,
    stack,
    sub,
    sum_,
    transpose,
    zero_grad,
)
from .functional import (
    ACTIVATIONS,
    activation,
    binary_cross_entropy_terms,
    conv2d,
    convolution,
    depthwise_conv1d,
    dropout,
    glu,
    layer_norm,
    linear,
    lstm_recurrence,
    output_length,
    pointwise_conv1d,
    relu,
    sigmoid,
    softmax,
    softplus,
    swish,
    tanh,
)
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .optim import AdamState, adam_step

__all__ = [name for name in dir() if not name.startswith("_")]
