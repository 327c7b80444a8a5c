"""Minimal reverse-mode autodiff on numpy arrays."""

from .core import ShapeError, Tensor, as_tensor, make_node, parameter
from .ops import *  # noqa: F401,F403
from .ops import __all__ as _ops_all
from .optim import Adam, LrSchedule, NonFiniteGradient, adam_step, lr_at
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .gradcheck import check_gradients, numeric_grad, rel_error

__all__ = [
    "ShapeError", "Tensor", "as_tensor", "make_node", "parameter",
    "Adam", "LrSchedule", "NonFiniteGradient", "adam_step", "lr_at",
    "CheckpointError", "load_tensors", "save_tensors",
    "check_gradients", "numeric_grad", "rel_error",
] + list(_ops_all)
