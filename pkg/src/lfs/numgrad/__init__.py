"""Small reverse-mode autodiff over float64 numpy arrays."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import Adam, ParamGraph, eval_with_gradients, grad_norm, init_affine, init_conv, orthogonal
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    affine,
    as_tensor,
    checked,
    clamp_min,
    concat,
    conv2d,
    div,
    dot,
    exp,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    minimum,
    mul,
    no_grad,
    relu,
    reshape,
    set_checked,
    softmax,
    square,
    sub,
    tanh,
    transpose,
    tsum,
)

softmax_temp = softmax

__all__ = [
    "Adam", "CheckpointError", "NonFiniteError", "ParamGraph", "ShapeError", "Tensor", "add", "affine",
    "as_tensor", "checked", "clamp_min", "concat", "conv2d", "div", "dot", "eval_with_gradients", "exp",
    "getitem", "grad_norm", "init_affine", "init_conv", "l2_normalize", "layer_norm", "load_checkpoint", "log",
    "log_softmax", "matmul", "mean", "minimum", "mul", "no_grad", "orthogonal", "relu", "reshape",
    "save_checkpoint", "set_checked", "softmax", "softmax_temp", "square", "sub", "tanh", "transpose", "tsum",
]
