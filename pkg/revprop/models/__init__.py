"""Reversible model construction and the non-reversible model pieces."""
from .config import ModelConfig
from .config import ModelKind
from .data import Batch
from .data import make_batch
from .loss import loss_and_grad_head
from .model import ForwardRecord
from .model import Model
from .model import Stage
from .model import StageRecord
from .model import boundary_backward
from .model import build_model
from .model import cross_boundary
from .model import embed
from .model import embed_backward
from .model import forward_full
from .model import head_backward
from .model import num_params
from .model import param_table

__all__ = [
    "Batch",
    "ForwardRecord",
    "Model",
    "ModelConfig",
    "ModelKind",
    "Stage",
    "StageRecord",
    "boundary_backward",
    "build_model",
    "cross_boundary",
    "embed",
    "embed_backward",
    "forward_full",
    "head_backward",
    "loss_and_grad_head",
    "make_batch",
    "num_params",
    "param_table",
]
