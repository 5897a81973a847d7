"""Deterministic forward primitives and their vector-Jacobian products.

Every forward returns its output together with a cache holding exactly what
its VJP needs. VJPs are invoked explicitly, either through the matching
``*_vjp`` function or through :func:`vjp` with a ``Primitive`` tag.

Matrix products accumulate over the inner index strictly left to right, so
calling any primitive twice on the same inputs gives bit-identical results
regardless of thread count or BLAS vendor.

GELU uses the tanh approximation::

    gelu(x) = 0.5 * x * (1 + tanh(sqrt(2 / pi) * (x + 0.044715 * x**3)))
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any
from typing import Callable
from typing import ClassVar
from typing import Dict
from typing import Tuple
from typing import Union

import numpy as np

from revprop.exceptions import ContractError
from revprop.exceptions import ShapeError

from .core import Tensor
from .core import check_finite

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


class Primitive(enum.Enum):
    """Identifiers for the differentiable primitives."""

    MATMUL = "matmul"
    ROW_SOFTMAX = "row_softmax"
    GELU = "gelu"
    LAYER_NORM = "layer_norm"


@dataclass(frozen=True)
class MatmulCache:
    """Saved operands of a matrix product."""

    primitive: ClassVar[Primitive] = Primitive.MATMUL
    a: Tensor
    b: Tensor

    @property
    def out_shape(self) -> Tuple[int, ...]:  # noqa: D102
        return tuple(self.a.shape[:-1]) + (self.b.shape[-1],)


@dataclass(frozen=True)
class SoftmaxCache:
    """Saved output of a row softmax."""

    primitive: ClassVar[Primitive] = Primitive.ROW_SOFTMAX
    y: Tensor

    @property
    def out_shape(self) -> Tuple[int, ...]:  # noqa: D102
        return tuple(self.y.shape)


@dataclass(frozen=True)
class GeluCache:
    """Saved input of a GELU."""

    primitive: ClassVar[Primitive] = Primitive.GELU
    x: Tensor

    @property
    def out_shape(self) -> Tuple[int, ...]:  # noqa: D102
        return tuple(self.x.shape)


@dataclass(frozen=True)
class LayerNormCache:
    """Saved normalized input and reciprocal standard deviation."""

    primitive: ClassVar[Primitive] = Primitive.LAYER_NORM
    x_hat: Tensor
    rstd: Tensor
    gamma: Tensor

    @property
    def out_shape(self) -> Tuple[int, ...]:  # noqa: D102
        return tuple(self.x_hat.shape)


Cache = Union[MatmulCache, SoftmaxCache, GeluCache, LayerNormCache]


def _check_matmul(a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul dtype mismatch, {a.dtype} and {b.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree, {a.shape} and {b.shape}"
        )
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree, {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Return ``c[..., i, j] = sum_k a[..., i, k] * b[..., k, j]``.

    _b_ is either a plain matrix shared by every leading index of _a_, or has
    the same leading dimensions as _a_. The sum over ``k`` is accumulated in
    increasing ``k`` order.
    """
    _check_matmul(a, b)
    out = a[..., :, 0:1] * b[..., 0:1, :]
    for k in range(1, a.shape[-1]):
        out += a[..., :, k : k + 1] * b[..., k : k + 1, :]
    return check_finite(out, "matmul")


def matmul_fwd(a: Tensor, b: Tensor) -> Tuple[Tensor, MatmulCache]:
    """Matrix product returning a cache for :func:`matmul_vjp`."""
    return matmul(a, b), MatmulCache(a, b)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two dimensions, returning a contiguous copy."""
    return np.ascontiguousarray(np.swapaxes(x, -1, -2))


def matmul_vjp(cache: MatmulCache, d_out: Tensor) -> Tuple[Tensor, Tensor]:
    """Cotangents ``(d_a, d_b)`` of a matrix product."""
    a, b = cache.a, cache.b
    d_a = matmul(d_out, transpose(b))
    if b.ndim == 2:
        # Shared weight: reduce over every leading index of ``a``, row by row.
        rows = a.reshape(-1, a.shape[-1])
        d_b = matmul(transpose(rows), d_out.reshape(-1, b.shape[-1]))
    else:
        d_b = matmul(transpose(a), d_out)
    return d_a, d_b


def row_softmax(x: Tensor) -> Tuple[Tensor, SoftmaxCache]:
    """Softmax over the last dimension, shifted by the row maximum."""
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError("row_softmax expects a non-empty last dimension")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    check_finite(y, "row_softmax")
    return y, SoftmaxCache(y)


def row_softmax_vjp(cache: SoftmaxCache, d_out: Tensor) -> Tuple[Tensor]:
    """Cotangent of the softmax input."""
    y = cache.y
    d_x = y * (d_out - (d_out * y).sum(axis=-1, keepdims=True))
    return (check_finite(d_x, "row_softmax_vjp"),)


def gelu(x: Tensor) -> Tuple[Tensor, GeluCache]:
    """Elementwise tanh-approximation GELU."""
    t = np.tanh(GELU_C * (x + GELU_K * x**3))
    y = 0.5 * x * (1.0 + t)
    return check_finite(y, "gelu"), GeluCache(x)


def gelu_vjp(cache: GeluCache, d_out: Tensor) -> Tuple[Tensor]:
    """Cotangent of the GELU input."""
    x = cache.x
    t = np.tanh(GELU_C * (x + GELU_K * x**3))
    slope = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (
        1.0 + 3.0 * GELU_K * x * x
    )
    return (check_finite(d_out * slope, "gelu_vjp"),)


def layer_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
) -> Tuple[Tensor, LayerNormCache]:
    """Normalize the last dimension with population variance, then scale and shift."""
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm parameters must have shape ({x.shape[-1]},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    x_hat = centered * rstd
    y = x_hat * gamma + beta
    return check_finite(y, "layer_norm"), LayerNormCache(x_hat, rstd, gamma)


def sum_rows(x: Tensor) -> Tensor:
    """Sum over every leading dimension, keeping the last."""
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def layer_norm_vjp(
    cache: LayerNormCache,
    d_out: Tensor,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Cotangents ``(d_x, d_gamma, d_beta)`` of a layer norm."""
    x_hat, rstd = cache.x_hat, cache.rstd
    g = d_out * cache.gamma
    d_x = rstd * (
        g
        - g.mean(axis=-1, keepdims=True)
        - x_hat * (g * x_hat).mean(axis=-1, keepdims=True)
    )
    d_gamma = sum_rows(d_out * x_hat)
    d_beta = sum_rows(d_out)
    return check_finite(d_x, "layer_norm_vjp"), d_gamma, d_beta


_VJPS: Dict[Primitive, Callable[[Any, Tensor], Tuple[Tensor, ...]]] = {
    Primitive.MATMUL: matmul_vjp,
    Primitive.ROW_SOFTMAX: row_softmax_vjp,
    Primitive.GELU: gelu_vjp,
    Primitive.LAYER_NORM: layer_norm_vjp,
}


def vjp(primitive: Primitive, cache: Cache, d_out: Tensor) -> Tuple[Tensor, ...]:
    """Return the cotangent of every input of _primitive_, parameters included.

    Raises:
        ContractError: If _cache_ was not produced by _primitive_.
        ShapeError: If _d_out_ does not have the forward output's shape.
    """
    if cache.primitive is not primitive:
        raise ContractError(
            f"{primitive.value} vjp called with a {cache.primitive.value} cache"
        )
    if tuple(d_out.shape) != cache.out_shape:
        raise ShapeError(
            f"{primitive.value} vjp expected a cotangent of shape "
            f"{cache.out_shape}, got {tuple(d_out.shape)}"
        )
    return _VJPS[primitive](cache, d_out)
