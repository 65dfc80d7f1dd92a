from duplexlab.nn.kernels import BACKEND
from duplexlab.nn.tensor import (
    GraphError,
    Tensor,
    backward,
    no_grad,
    param,
    set_debug_checks,
)

__all__ = [
    "BACKEND",
    "GraphError",
    "Tensor",
    "backward",
    "no_grad",
    "param",
    "set_debug_checks",
]
