"""The MLP sublayer, G in the reversible coupling.

``y = W2 @ GELU(W1 @ LayerNorm(x) + b1) + b2`` with no residual add.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar
from typing import Tuple

from revprop.exceptions import ShapeError
from revprop.tensor import GeluCache
from revprop.tensor import LayerNormCache
from revprop.tensor import MatmulCache
from revprop.tensor import Tensor
from revprop.tensor import gelu
from revprop.tensor import gelu_vjp
from revprop.tensor import layer_norm
from revprop.tensor import layer_norm_vjp
from revprop.tensor import matmul
from revprop.tensor import matmul_vjp
from revprop.tensor import nbytes
from revprop.tensor import sum_rows

from .attention import LN_EPS
from .params import ParamRecord


@dataclass(frozen=True, eq=False)
class MlpParams(ParamRecord):
    """Parameters of one MLP sublayer."""

    ARRAYS: ClassVar[Tuple[str, ...]] = ("w1", "b1", "w2", "b2", "ln_gamma", "ln_beta")

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor

    def __post_init__(self) -> None:
        d, h = self.w1.shape
        if h < d:
            raise ShapeError(f"mlp hidden width {h} is smaller than model width {d}")
        if self.w2.shape != (h, d) or self.b1.shape != (h,) or self.b2.shape != (d,):
            raise ShapeError(
                f"mlp parameters disagree: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )
        if self.ln_gamma.shape != (d,) or self.ln_beta.shape != (d,):
            raise ShapeError(f"mlp layer norm parameters must have shape ({d},)")

    @property
    def width(self) -> int:
        """Model width ``d``."""
        return int(self.w1.shape[0])


@dataclass(frozen=True, eq=False)
class MlpCache:
    """Intermediates saved by :func:`mlp_forward`."""

    params: MlpParams
    ln: LayerNormCache
    x_norm: Tensor
    hidden: Tensor
    act: Tensor

    @property
    def nbytes(self) -> int:
        """Bytes of saved activations, parameters excluded."""
        return nbytes((self.ln.x_hat, self.ln.rstd, self.x_norm, self.hidden, self.act))


def mlp_forward(x: Tensor, p: MlpParams) -> Tuple[Tensor, MlpCache]:
    """Apply the MLP sublayer to ``x`` of shape ``[..., d]``."""
    if x.shape[-1] != p.width:
        raise ShapeError(f"mlp expects a last dimension of {p.width}, got {x.shape}")
    x_norm, ln = layer_norm(x, p.ln_gamma, p.ln_beta, LN_EPS)
    hidden = matmul(x_norm, p.w1) + p.b1
    act, _ = gelu(hidden)
    y = matmul(act, p.w2) + p.b2
    return y, MlpCache(p, ln, x_norm, hidden, act)


def mlp_vjp(cache: MlpCache, d_y: Tensor) -> Tuple[Tensor, MlpParams]:
    """Cotangents of the MLP input and parameters."""
    p = cache.params
    expected = cache.x_norm.shape
    if d_y.shape != expected:
        raise ShapeError(f"mlp cotangent must have shape {expected}, got {d_y.shape}")
    d_b2 = sum_rows(d_y)
    d_act, d_w2 = matmul_vjp(MatmulCache(cache.act, p.w2), d_y)
    (d_hidden,) = gelu_vjp(GeluCache(cache.hidden), d_act)
    d_b1 = sum_rows(d_hidden)
    d_x_norm, d_w1 = matmul_vjp(MatmulCache(cache.x_norm, p.w1), d_hidden)
    d_x, d_gamma, d_beta = layer_norm_vjp(cache.ln, d_x_norm)
    grads = MlpParams(
        w1=d_w1,
        b1=d_b1,
        w2=d_w2,
        b2=d_b2,
        ln_gamma=d_gamma,
        ln_beta=d_beta,
    )
    return d_x, grads
