"""Minimal dense tensor library with reverse-mode gradients."""

from .gradcheck import finite_diff_check
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    as_tensor,
    dropout,
    gather_rows,
    gelu,
    geglu,
    layer_norm,
    log_softmax_rows,
    matmul,
    mean_all,
    mul,
    neg,
    reshape,
    softmax_rows,
    sub,
    sum_all,
    transpose,
    zero_grads,
)

__all__ = [
    "DEFAULT_DTYPE",
    "Tensor",
    "add",
    "as_tensor",
    "dropout",
    "finite_diff_check",
    "gather_rows",
    "gelu",
    "geglu",
    "layer_norm",
    "log_softmax_rows",
    "matmul",
    "mean_all",
    "mul",
    "neg",
    "reshape",
    "softmax_rows",
    "sub",
    "sum_all",
    "transpose",
    "zero_grads",
]
