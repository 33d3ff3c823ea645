"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import tensor as ops
from .graph import Graph, backward, grad, topo_order
from .gradcheck import check_gradients, numeric_grad, relative_error
from .nn import ParamStore, add_mlp, mlp, mlp_numpy
from .optim import clip_by_global_norm, sgd_step
from .tensor import DiffError, NonFiniteError, ShapeError, Tensor

__all__ = [
    "DiffError", "Graph", "NonFiniteError", "ParamStore", "ShapeError", "Tensor",
    "add_mlp", "backward", "check_gradients", "clip_by_global_norm", "grad", "mlp",
    "mlp_numpy", "numeric_grad", "ops", "relative_error", "sgd_step", "topo_order",
]
