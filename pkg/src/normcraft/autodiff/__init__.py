"""Minimal reverse-mode differentiation over dense float64 tensors."""

from .checkpoint import load_tensors, save_tensors
from .gradcheck import finite_diff_check
from .tensor import (
    Tensor,
    add,
    as_tensor,
    avgpool,
    concat,
    cross3,
    dense,
    edge_sum,
    exp,
    expand,
    gather,
    l2norm,
    matmul,
    maxpool,
    mean,
    mul,
    narrow,
    no_grad,
    normalize,
    quat_to_rotmat,
    record_kinks,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    square,
    sub,
    sum,
    transpose,
)

__all__ = [
    "Tensor", "add", "as_tensor", "avgpool", "concat", "cross3", "dense", "edge_sum", "exp", "expand", "finite_diff_check",
    "gather", "l2norm", "load_tensors", "matmul", "maxpool", "mean", "mul", "narrow", "no_grad",
    "normalize", "quat_to_rotmat", "record_kinks", "relu", "reshape", "save_tensors", "scale", "sigmoid", "softmax",
    "square", "sub", "sum", "transpose",
]
