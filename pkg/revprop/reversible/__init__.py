"""The reversible coupling, its inverse and its backward step."""
from .coupling import DEFAULT_SUBLAYERS
from .coupling import Coupled
from .coupling import RecomputeState
from .coupling import RevBlock
from .coupling import RevBlockGrads
from .coupling import Sublayers
from .coupling import rev_backward_local
from .coupling import rev_backward_stored
from .coupling import rev_forward
from .coupling import rev_inverse
from .coupling import rev_recompute
from .coupling import rev_recompute_stored
from .coupling import rev_vjp

__all__ = [
    "DEFAULT_SUBLAYERS",
    "Coupled",
    "RecomputeState",
    "RevBlock",
    "RevBlockGrads",
    "Sublayers",
    "rev_backward_local",
    "rev_backward_stored",
    "rev_forward",
    "rev_inverse",
    "rev_recompute",
    "rev_recompute_stored",
    "rev_vjp",
]
