from .tensor import Graph, Node, Tensor, as_tensor, grad_enabled, no_grad
from .ops import (
    ShapeError,
    add,
    concat_channels,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    mean,
    mul,
    square,
    sub,
)
from .init import he_init, he_variance
from .optim import Adam, OptimConfig, learning_rate_at
from .gradcheck import NonFiniteError, finite_diff_check
from .checkpoint import CheckpointError, load_tensors, save_tensors

__all__ = [
    "Adam",
    "CheckpointError",
    "Graph",
    "Node",
    "NonFiniteError",
    "OptimConfig",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "finite_diff_check",
    "grad_enabled",
    "he_init",
    "he_variance",
    "leaky_relu",
    "learning_rate_at",
    "load_tensors",
    "mean",
    "mul",
    "no_grad",
    "save_tensors",
    "square",
    "sub",
]
