"""Minimal dense-tensor numerics: tape autodiff, AdamW, checkpoint container."""

from .tensor import (
    Tensor,
    add,
    assert_finite,
    backward,
    concat,
    concat_channel,
    div,
    embedding,
    gelu,
    grad_enabled,
    layer_norm,
    matmul,
    mean_,
    mul,
    no_grad,
    reshape,
    slice_axis,
    softmax,
    split,
    sub,
    sum_,
    transpose,
)
from .optim import AdamW, OptimizerState, adamw_step
from . import checkpoint
from .gradcheck import check_gradients, numerical_grad

__all__ = [
    "Tensor", "add", "sub", "mul", "div", "matmul", "gelu", "softmax", "layer_norm",
    "reshape", "transpose", "concat", "concat_channel", "slice_axis", "split",
    "embedding", "sum_", "mean_", "backward", "no_grad", "grad_enabled",
    "assert_finite", "AdamW", "OptimizerState", "adamw_step", "checkpoint",
    "check_gradients", "numerical_grad",
]
