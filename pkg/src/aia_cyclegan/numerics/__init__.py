from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import KINK_MARGIN, away_from_kinks, finite_difference_gradient, gradient_check, relative_error
from .module import Module, Parameter
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    div,
    exp,
    getitem,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    promoted_precision,
    reshape,
    sigmoid,
    softplus,
    stack,
    sub,
    tabs,
    transpose,
    tsum,
)

__all__ = [
    "Adam",
    "AdamState",
    "KINK_MARGIN",
    "Module",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "away_from_kinks",
    "concat",
    "default_dtype",
    "div",
    "exp",
    "finite_difference_gradient",
    "getitem",
    "grad_enabled",
    "gradient_check",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "power",
    "promoted_precision",
    "relative_error",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softplus",
    "stack",
    "sub",
    "tabs",
    "transpose",
    "tsum",
]
