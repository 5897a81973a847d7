"""The attention sublayer, F in the reversible coupling.

``y = Proj(MultiHeadSelfAttn(LayerNorm(x)))`` with no residual add and no
projection biases. Scores are ``(q @ k.T) / sqrt(head_dim)``. When a window
is set, attention runs independently over each run of ``window`` consecutive
tokens.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar
from typing import Optional
from typing import Tuple

import numpy as np

from revprop.exceptions import ShapeError
from revprop.tensor import LayerNormCache
from revprop.tensor import MatmulCache
from revprop.tensor import SoftmaxCache
from revprop.tensor import Tensor
from revprop.tensor import layer_norm
from revprop.tensor import layer_norm_vjp
from revprop.tensor import matmul
from revprop.tensor import matmul_vjp
from revprop.tensor import nbytes
from revprop.tensor import row_softmax
from revprop.tensor import row_softmax_vjp
from revprop.tensor import transpose

from .params import ParamRecord

LN_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class AttentionParams(ParamRecord):
    """Parameters of one attention sublayer."""

    ARRAYS: ClassVar[Tuple[str, ...]] = ("w_qkv", "w_out", "ln_gamma", "ln_beta")

    w_qkv: Tensor
    w_out: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    heads: int
    window: Optional[int] = None

    def __post_init__(self) -> None:
        d = self.w_out.shape[0]
        if self.w_qkv.shape != (d, 3 * d) or self.w_out.shape != (d, d):
            raise ShapeError(
                f"attention weights must be [d x 3d] and [d x d], got "
                f"{self.w_qkv.shape} and {self.w_out.shape}"
            )
        if self.ln_gamma.shape != (d,) or self.ln_beta.shape != (d,):
            raise ShapeError(f"attention layer norm parameters must have shape ({d},)")
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"width {d} is not divisible by {self.heads} heads")
        if self.window is not None and self.window < 1:
            raise ShapeError("attention window must be positive")

    @property
    def width(self) -> int:
        """Model width ``d``."""
        return int(self.w_out.shape[0])


@dataclass(frozen=True, eq=False)
class AttentionCache:
    """Intermediates saved by :func:`attention_forward`."""

    params: AttentionParams
    ln: LayerNormCache
    x_norm: Tensor
    q: Tensor
    k: Tensor
    v: Tensor
    attn: Tensor
    ctx: Tensor
    scale: float

    @property
    def nbytes(self) -> int:
        """Bytes of saved activations, parameters excluded."""
        return nbytes(
            (
                self.ln.x_hat,
                self.ln.rstd,
                self.x_norm,
                self.q,
                self.k,
                self.v,
                self.attn,
                self.ctx,
            )
        )


def _window(p: AttentionParams, n: int) -> int:
    if p.window is None:
        return n
    if n % p.window:
        raise ShapeError(f"sequence length {n} is not divisible by window {p.window}")
    return p.window


def _to_heads(x: Tensor, heads: int, window: int) -> Tensor:
    # [B, N, d] -> [B, N / window, heads, window, d / heads]
    b, n, d = x.shape
    split = x.reshape(b, n // window, window, heads, d // heads)
    return np.ascontiguousarray(split.transpose(0, 1, 3, 2, 4))


def _from_heads(x: Tensor) -> Tensor:
    b, n_windows, heads, window, head_dim = x.shape
    merged = x.transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(merged).reshape(b, n_windows * window, heads * head_dim)


def attention_forward(x: Tensor, p: AttentionParams) -> Tuple[Tensor, AttentionCache]:
    """Apply the attention sublayer to ``x`` of shape ``[B, N, d]``."""
    if x.ndim != 3 or x.shape[-1] != p.width:
        raise ShapeError(f"attention expects [B, N, {p.width}], got {x.shape}")
    d = p.width
    window = _window(p, x.shape[1])
    scale = 1.0 / math.sqrt(d // p.heads)

    x_norm, ln = layer_norm(x, p.ln_gamma, p.ln_beta, LN_EPS)
    qkv = matmul(x_norm, p.w_qkv)
    q = _to_heads(qkv[..., :d], p.heads, window)
    k = _to_heads(qkv[..., d : 2 * d], p.heads, window)
    v = _to_heads(qkv[..., 2 * d :], p.heads, window)

    scores = matmul(q, transpose(k)) * scale
    attn, _ = row_softmax(scores)
    ctx = _from_heads(matmul(attn, v))
    y = matmul(ctx, p.w_out)
    return y, AttentionCache(p, ln, x_norm, q, k, v, attn, ctx, scale)


def attention_vjp(
    cache: AttentionCache,
    d_y: Tensor,
) -> Tuple[Tensor, AttentionParams]:
    """Cotangents of the attention input and parameters."""
    p = cache.params
    if d_y.shape != cache.ctx.shape:
        raise ShapeError(
            f"attention cotangent must have shape {cache.ctx.shape}, got {d_y.shape}"
        )
    window = cache.q.shape[3]

    d_ctx, d_w_out = matmul_vjp(MatmulCache(cache.ctx, p.w_out), d_y)
    d_ctx_heads = _to_heads(d_ctx, p.heads, window)
    d_attn, d_v = matmul_vjp(MatmulCache(cache.attn, cache.v), d_ctx_heads)
    (d_scores,) = row_softmax_vjp(SoftmaxCache(cache.attn), d_attn)
    d_scores = d_scores * cache.scale
    d_q, d_kt = matmul_vjp(MatmulCache(cache.q, transpose(cache.k)), d_scores)

    d_qkv = np.concatenate(
        (_from_heads(d_q), _from_heads(transpose(d_kt)), _from_heads(d_v)),
        axis=-1,
    )
    d_x_norm, d_w_qkv = matmul_vjp(MatmulCache(cache.x_norm, p.w_qkv), d_qkv)
    d_x, d_gamma, d_beta = layer_norm_vjp(cache.ln, d_x_norm)
    grads = AttentionParams(
        w_qkv=d_w_qkv,
        w_out=d_w_out,
        ln_gamma=d_gamma,
        ln_beta=d_beta,
        heads=p.heads,
        window=p.window,
    )
    return d_x, grads
