from . import ops
from .graph import Graph, GraphError, NonFiniteError, ShapeError, forward, gradients
from .nn import Module
from .optim import Adam, OptimizerState, Schedule, adam_step, clip_by_global_norm, schedule_lr
from .tensor import (
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    grad,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "Adam",
    "Graph",
    "GraphError",
    "Module",
    "NonFiniteError",
    "OptimizerState",
    "Schedule",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "clip_by_global_norm",
    "default_dtype",
    "forward",
    "get_default_dtype",
    "grad",
    "gradients",
    "no_grad",
    "ops",
    "schedule_lr",
    "set_default_dtype",
]
