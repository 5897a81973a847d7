"""Sublayers of the reversible block and the non-reversible stage boundaries."""
from .attention import AttentionCache
from .attention import AttentionParams
from .attention import attention_forward
from .attention import attention_vjp
from .boundary import BoundaryParams
from .boundary import FuseCache
from .boundary import FusionKind
from .boundary import MergeCache
from .boundary import fuse
from .boundary import fuse_average
from .boundary import fuse_vjp
from .boundary import patch_merge
from .boundary import patch_merge_vjp
from .mlp import MlpCache
from .mlp import MlpParams
from .mlp import mlp_forward
from .mlp import mlp_vjp
from .params import ParamRecord

__all__ = [
    "AttentionCache",
    "AttentionParams",
    "BoundaryParams",
    "FuseCache",
    "FusionKind",
    "MergeCache",
    "MlpCache",
    "MlpParams",
    "ParamRecord",
    "attention_forward",
    "attention_vjp",
    "fuse",
    "fuse_average",
    "fuse_vjp",
    "mlp_forward",
    "mlp_vjp",
    "patch_merge",
    "patch_merge_vjp",
]
