"""Reverse-mode autodiff core: tensors, primitives, gradient checking, sampling."""

from .gradcheck import GradCheckResult, grad_check
from .sampling import gumbel_noise, gumbel_softmax
from .tensor import (
    Tensor,
    add,
    concat,
    custom_op,
    div,
    exp,
    forward_backward,
    getitem,
    grad_enabled,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    rng_from,
    sigmoid,
    silu,
    softmax,
    sqrt,
    stop_gradient,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "GradCheckResult",
    "Tensor",
    "add",
    "concat",
    "custom_op",
    "div",
    "exp",
    "forward_backward",
    "getitem",
    "grad_check",
    "grad_enabled",
    "gumbel_noise",
    "gumbel_softmax",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "reshape",
    "rng_from",
    "sigmoid",
    "silu",
    "softmax",
    "sqrt",
    "stop_gradient",
    "sub",
    "sum_",
    "tanh",
    "transpose",
]
