"""Stage-boundary layers: fusion of the coupled pair, then patch merging.

A hierarchical model leaves each stage with a pair ``(o1, o2)``. The pair is
fused into a single stream (by averaging or by a learned projection of the
concatenation), and the fused tokens are merged ``r`` at a time and projected
to the next stage's width.

Sequences merge ``r = 2`` adjacent tokens. Square-ish 2-D token grids merge
each 2x2 neighbourhood (``r = 4``), gathered top-left, top-right,
bottom-left, bottom-right, halving the grid in both directions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import ClassVar
from typing import Optional
from typing import Tuple

import numpy as np

from revprop.exceptions import ConfigError
from revprop.exceptions import ShapeError
from revprop.tensor import MatmulCache
from revprop.tensor import Tensor
from revprop.tensor import matmul
from revprop.tensor import matmul_vjp

from .params import ParamRecord

Grid = Tuple[int, int]


class FusionKind(enum.Enum):
    """How the two streams of a coupled pair are fused."""

    AVERAGE = "average"
    MLP = "mlp"

    @classmethod
    def parse(cls, value: str) -> FusionKind:
        """Return the ``FusionKind`` named by _value_."""
        try:
            return cls(value.strip().lower())
        except ValueError as err:
            raise ConfigError(
                f"unknown fusion kind {value!r}, expected average or mlp"
            ) from err


@dataclass(frozen=True, eq=False)
class BoundaryParams(ParamRecord):
    """Parameters of the transition between two stages.

    :param merge_w: Patch-merging projection of shape ``[r*d, d_next]``.
    :param fusion_kind: Average the pair, or project its concatenation.
    :param fusion_w: Projection of shape ``[2d, d]``, present only for
        ``FusionKind.MLP``.
    :param grid: The ``(H, W)`` token grid entering this boundary, or
        ``None`` for plain sequences.
    """

    ARRAYS: ClassVar[Tuple[str, ...]] = ("merge_w", "fusion_w")

    merge_w: Tensor
    fusion_kind: FusionKind = FusionKind.AVERAGE
    fusion_w: Optional[Tensor] = None
    grid: Optional[Grid] = None

    def __post_init__(self) -> None:
        if (self.fusion_kind is FusionKind.MLP) != (self.fusion_w is not None):
            raise ShapeError("fusion_w must be given exactly when fusion_kind is mlp")
        rd = self.merge_w.shape[0]
        if rd % self.reduction:
            raise ShapeError(
                f"merge_w rows ({rd}) are not a multiple of the "
                f"reduction {self.reduction}"
            )
        d = rd // self.reduction
        if self.fusion_w is not None and self.fusion_w.shape != (2 * d, d):
            raise ShapeError(
                f"fusion_w must have shape {(2 * d, d)}, got {self.fusion_w.shape}"
            )

    @property
    def reduction(self) -> int:
        """Tokens merged into one, ``r``."""
        return 2 if self.grid is None else 4

    @property
    def width(self) -> int:
        """Width entering the boundary."""
        return int(self.merge_w.shape[0]) // self.reduction

    @property
    def next_width(self) -> int:
        """Width leaving the boundary."""
        return int(self.merge_w.shape[1])

    @property
    def next_grid(self) -> Optional[Grid]:
        """Token grid leaving the boundary."""
        if self.grid is None:
            return None
        return (self.grid[0] // 2, self.grid[1] // 2)


@dataclass(frozen=True, eq=False)
class MergeCache:
    """Grouped tokens saved by :func:`patch_merge`."""

    params: BoundaryParams
    grouped: Tensor
    in_shape: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class FuseCache:
    """Inputs saved by :func:`fuse`."""

    params: BoundaryParams
    joined: Optional[Tensor]
    in_shape: Tuple[int, ...]


def _group(x: Tensor, p: BoundaryParams) -> Tensor:
    b, n, d = x.shape
    r = p.reduction
    if n % r:
        raise ShapeError(f"{n} tokens cannot be merged {r} at a time")
    if p.grid is None:
        return x.reshape(b, n // r, r * d)
    h, w = p.grid
    if h * w != n or h % 2 or w % 2:
        raise ShapeError(f"{n} tokens do not form an even {h}x{w} grid")
    blocks = x.reshape(b, h // 2, 2, w // 2, 2, d).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(blocks).reshape(b, n // r, r * d)


def _ungroup(g: Tensor, p: BoundaryParams, in_shape: Tuple[int, ...]) -> Tensor:
    b, n, d = in_shape
    if p.grid is None:
        return g.reshape(b, n, d)
    h, w = p.grid
    blocks = g.reshape(b, h // 2, w // 2, 2, 2, d).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(blocks).reshape(b, n, d)


def patch_merge(x: Tensor, p: BoundaryParams) -> Tuple[Tensor, MergeCache]:
    """Concatenate each group of ``r`` tokens and project by ``merge_w``."""
    if x.ndim != 3 or x.shape[-1] != p.width:
        raise ShapeError(f"patch merge expects [B, N, {p.width}], got {x.shape}")
    grouped = _group(x, p)
    return matmul(grouped, p.merge_w), MergeCache(p, grouped, tuple(x.shape))


def patch_merge_vjp(cache: MergeCache, d_y: Tensor) -> Tuple[Tensor, Tensor]:
    """Cotangents ``(d_x, d_merge_w)`` of a patch merge."""
    merge = MatmulCache(cache.grouped, cache.params.merge_w)
    d_grouped, d_merge_w = matmul_vjp(merge, d_y)
    return _ungroup(d_grouped, cache.params, cache.in_shape), d_merge_w


def fuse_average(i1: Tensor, i2: Tensor) -> Tensor:
    """Return ``(i1 + i2) / 2``."""
    if i1.shape != i2.shape:
        raise ShapeError(f"cannot fuse tensors of shape {i1.shape} and {i2.shape}")
    return (i1 + i2) * 0.5


def fuse(i1: Tensor, i2: Tensor, p: BoundaryParams) -> Tuple[Tensor, FuseCache]:
    """Fuse a coupled pair into one stream."""
    if i1.shape != i2.shape:
        raise ShapeError(f"cannot fuse tensors of shape {i1.shape} and {i2.shape}")
    if p.fusion_kind is FusionKind.AVERAGE:
        return fuse_average(i1, i2), FuseCache(p, None, tuple(i1.shape))
    assert p.fusion_w is not None
    joined = np.concatenate((i1, i2), axis=-1)
    return matmul(joined, p.fusion_w), FuseCache(p, joined, tuple(i1.shape))


def fuse_vjp(
    cache: FuseCache,
    d_y: Tensor,
) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """Cotangents ``(d_i1, d_i2, d_fusion_w)``.

    ``d_fusion_w`` is ``None`` for averaging.
    """
    p = cache.params
    if p.fusion_kind is FusionKind.AVERAGE:
        half = d_y * 0.5
        return half, half.copy(), None
    assert p.fusion_w is not None and cache.joined is not None
    d_joined, d_fusion_w = matmul_vjp(MatmulCache(cache.joined, p.fusion_w), d_y)
    d = cache.in_shape[-1]
    return (
        np.ascontiguousarray(d_joined[..., :d]),
        np.ascontiguousarray(d_joined[..., d:]),
        d_fusion_w,
    )
