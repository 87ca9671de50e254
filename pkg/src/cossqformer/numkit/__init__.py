"""Minimal float64 tensors with tape-based reverse-mode differentiation."""

from .gradcheck import gradcheck, numeric_grad, relative_error
from .ops import (
    add,
    add_row,
    add_scalar,
    concat,
    div,
    exp,
    layer_norm,
    log,
    matmul,
    mean,
    mean_rows,
    mul,
    neg,
    permute,
    relu,
    reshape,
    scale,
    softmax_rows,
    sub,
    sum,
    sum_rows,
    take,
    transpose,
)
from .tensor import (
    ComputationTape,
    ContractError,
    NonFiniteError,
    ShapeError,
    Tensor,
    active_tape,
    backward,
    record,
)

__all__ = [
    "ComputationTape",
    "ContractError",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "active_tape",
    "add",
    "add_row",
    "add_scalar",
    "backward",
    "concat",
    "div",
    "exp",
    "gradcheck",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mean_rows",
    "mul",
    "neg",
    "numeric_grad",
    "permute",
    "record",
    "relative_error",
    "relu",
    "reshape",
    "scale",
    "softmax_rows",
    "sub",
    "sum",
    "sum_rows",
    "take",
    "transpose",
]
