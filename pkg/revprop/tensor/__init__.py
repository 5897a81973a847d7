"""Dense tensors, random streams and differentiable primitives."""
from .core import DType
from .core import Tensor
from .core import check_finite
from .core import nbytes
from .primitives import GeluCache
from .primitives import LayerNormCache
from .primitives import MatmulCache
from .primitives import Primitive
from .primitives import SoftmaxCache
from .primitives import gelu
from .primitives import gelu_vjp
from .primitives import layer_norm
from .primitives import layer_norm_vjp
from .primitives import matmul
from .primitives import matmul_fwd
from .primitives import matmul_vjp
from .primitives import row_softmax
from .primitives import row_softmax_vjp
from .primitives import sum_rows
from .primitives import transpose
from .primitives import vjp
from .rng import Rng

__all__ = [
    "DType",
    "Tensor",
    "Rng",
    "Primitive",
    "MatmulCache",
    "SoftmaxCache",
    "GeluCache",
    "LayerNormCache",
    "check_finite",
    "nbytes",
    "matmul",
    "matmul_fwd",
    "matmul_vjp",
    "row_softmax",
    "row_softmax_vjp",
    "gelu",
    "gelu_vjp",
    "layer_norm",
    "layer_norm_vjp",
    "sum_rows",
    "transpose",
    "vjp",
]
