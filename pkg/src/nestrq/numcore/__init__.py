"""Minimal float64 tensor library with reverse-mode autodiff."""

from .gradcheck import gradcheck, relative_error
from .ops import (
    PaddingSpec,
    add,
    concat,
    conv1d,
    conv1d_depthwise,
    cross_entropy,
    div,
    exp,
    getitem,
    glu,
    layer_norm,
    linear,
    log,
    log_softmax,
    masked_softmax,
    matmul,
    mean,
    mul,
    neg,
    power,
    reshape,
    sigmoid,
    softmax_rows,
    sub,
    swap_last,
    swish,
    tanh,
    transpose,
)
from .ops import sum as tsum
from .rng import Rng
from .tensor import Op, Tape, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "Op", "PaddingSpec", "Rng", "Tape", "Tensor", "add", "as_tensor", "backward", "concat",
    "conv1d", "conv1d_depthwise", "cross_entropy", "div", "exp", "getitem", "glu",
    "grad_enabled", "gradcheck", "layer_norm", "linear", "log", "log_softmax",
    "masked_softmax", "matmul", "mean", "mul", "neg", "no_grad", "power", "relative_error",
    "reshape", "sigmoid", "softmax_rows", "sub", "swap_last", "swish", "tanh", "transpose",
    "tsum",
]
