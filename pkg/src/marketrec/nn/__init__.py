"""Small dense numerical kernel: tensors, a gradient tape, Adam."""

from .autodiff import (
    BCE_CLAMP,
    ShapeError,
    Tape,
    Tensor,
    add,
    affine,
    as_tensor,
    backward,
    bce_loss,
    broadcast_to,
    clamp,
    concat,
    elementwise_mul,
    index_add,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_record,
    outer,
    reciprocal,
    relu,
    sigmoid,
    sub,
    sum_to,
    take,
    transpose,
    tsum,
)
from .optim import INIT_SCHEMES, AdamState, adam_step, init_params, l2_grad

__all__ = [
    "BCE_CLAMP",
    "INIT_SCHEMES",
    "AdamState",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "affine",
    "as_tensor",
    "backward",
    "bce_loss",
    "broadcast_to",
    "clamp",
    "concat",
    "elementwise_mul",
    "index_add",
    "init_params",
    "l2_grad",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_record",
    "outer",
    "reciprocal",
    "relu",
    "sigmoid",
    "sub",
    "sum_to",
    "take",
    "transpose",
    "tsum",
]
