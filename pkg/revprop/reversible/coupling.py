"""The reversible coupling and its backward step.

A block maps ``(i1, i2)`` to ``(o1, o2)`` with::

    o2 = i2 + F(i1)
    o1 = i1 + G(o2)

and is inverted with one call each of ``F`` and ``G``::

    i1 = o1 - G(o2)
    i2 = o2 - F(i1)

The backward step is split in two halves so that an engine can run them on
different lanes. :func:`rev_recompute` (or :func:`rev_recompute_stored` when
the true input is at hand) produces a :class:`RecomputeState` holding the
block's input and the F/G intermediates, and :func:`rev_vjp` turns that state
and the output cotangent into the input cotangent and parameter gradients.
:func:`rev_backward_local` and :func:`rev_backward_stored` are those halves
composed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any
from typing import Callable
from typing import NamedTuple
from typing import Optional
from typing import Tuple

from revprop.exceptions import ShapeError
from revprop.layers import AttentionParams
from revprop.layers import MlpParams
from revprop.layers import attention_forward
from revprop.layers import attention_vjp
from revprop.layers import mlp_forward
from revprop.layers import mlp_vjp
from revprop.tensor import Tensor
from revprop.tensor import nbytes

Forward = Callable[[Tensor, Any], Tuple[Tensor, Any]]
Backward = Callable[[Any, Tensor], Tuple[Tensor, Any]]


class Sublayers(NamedTuple):
    """The F and G functions of a coupling, each with its VJP."""

    f_forward: Forward
    f_vjp: Backward
    g_forward: Forward
    g_vjp: Backward


DEFAULT_SUBLAYERS = Sublayers(
    f_forward=attention_forward,
    f_vjp=attention_vjp,
    g_forward=mlp_forward,
    g_vjp=mlp_vjp,
)


@dataclass(frozen=True, eq=False)
class Coupled:
    """The pair of activations flowing through reversible blocks."""

    i1: Tensor
    i2: Tensor

    def __post_init__(self) -> None:
        if self.i1.shape != self.i2.shape:
            raise ShapeError(
                f"coupled tensors must share a shape, got {self.i1.shape} "
                f"and {self.i2.shape}"
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of each half."""
        return tuple(self.i1.shape)

    @property
    def nbytes(self) -> int:
        """Bytes held by both halves."""
        return nbytes((self.i1, self.i2))


@dataclass(frozen=True, eq=False)
class RevBlock:
    """Parameters of one reversible block."""

    f: AttentionParams
    g: MlpParams
    block_id: int

    def __post_init__(self) -> None:
        f_width = getattr(self.f, "width", None)
        g_width = getattr(self.g, "width", None)
        if f_width is not None and g_width is not None and f_width != g_width:
            raise ShapeError(
                f"block {self.block_id}: attention width {f_width} does not "
                f"match mlp width {g_width}"
            )


@dataclass(frozen=True, eq=False)
class RevBlockGrads:
    """Parameter cotangents of one reversible block."""

    d_f: AttentionParams
    d_g: MlpParams


@dataclass(frozen=True, eq=False)
class RecomputeState:
    """A block's input and output with the F/G intermediates its VJP needs."""

    inp: Coupled
    out: Coupled
    f_cache: Any
    g_cache: Any

    @property
    def cache_nbytes(self) -> int:
        """Bytes of F and G intermediates, the block footprint."""
        return int(getattr(self.f_cache, "nbytes", 0)) + int(
            getattr(self.g_cache, "nbytes", 0)
        )


def rev_recompute_stored(
    block: RevBlock,
    inp: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> RecomputeState:
    """Run the coupling forward from a stored input, keeping F/G intermediates."""
    f_out, f_cache = sublayers.f_forward(inp.i1, block.f)
    o2 = inp.i2 + f_out
    g_out, g_cache = sublayers.g_forward(o2, block.g)
    o1 = inp.i1 + g_out
    return RecomputeState(inp, Coupled(o1, o2), f_cache, g_cache)


def rev_forward(
    block: RevBlock,
    inp: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Coupled:
    """Apply the block. Only the output survives the call."""
    return rev_recompute_stored(block, inp, sublayers).out


def rev_recompute(
    block: RevBlock,
    out: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> RecomputeState:
    """Recover a block's input from its output, keeping F/G intermediates."""
    g_out, g_cache = sublayers.g_forward(out.i2, block.g)
    i1 = out.i1 - g_out
    f_out, f_cache = sublayers.f_forward(i1, block.f)
    i2 = out.i2 - f_out
    return RecomputeState(Coupled(i1, i2), out, f_cache, g_cache)


def rev_inverse(
    block: RevBlock,
    out: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Coupled:
    """Recover a block's input from its output."""
    return rev_recompute(block, out, sublayers).inp


def rev_vjp(
    block: RevBlock,
    state: RecomputeState,
    d_out: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Tuple[Coupled, RevBlockGrads]:
    """Input cotangents and parameter gradients of a block.

    The G path is accumulated before the F path::

        d_i2 = d_o2 + G'(o2).T @ d_o1
        d_i1 = d_o1 + F'(i1).T @ d_i2
    """
    if d_out.shape != state.out.shape:
        raise ShapeError(
            f"block {block.block_id}: cotangent shape {d_out.shape} does not "
            f"match output shape {state.out.shape}"
        )
    d_g_in, d_g = sublayers.g_vjp(state.g_cache, d_out.i1)
    d_i2 = d_out.i2 + d_g_in
    d_f_in, d_f = sublayers.f_vjp(state.f_cache, d_i2)
    d_i1 = d_out.i1 + d_f_in
    return Coupled(d_i1, d_i2), RevBlockGrads(d_f=d_f, d_g=d_g)


def rev_backward_local(
    block: RevBlock,
    out: Coupled,
    d_out: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Tuple[Coupled, Coupled, RevBlockGrads]:
    """Recompute a block's input from its output, then backpropagate through it.

    Returns ``(inp, d_inp, grads)``. The intermediates are dropped on return.
    """
    state = rev_recompute(block, out, sublayers)
    d_inp, grads = rev_vjp(block, state, d_out, sublayers)
    return state.inp, d_inp, grads


def rev_backward_stored(
    block: RevBlock,
    inp: Coupled,
    d_out: Coupled,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
    state: Optional[RecomputeState] = None,
) -> Tuple[Coupled, RevBlockGrads]:
    """Backpropagate through a block whose true input was stored.

    If _state_ is given, its intermediates (kept from the forward pass) are
    used instead of being recomputed from _inp_.
    """
    if state is None:
        state = rev_recompute_stored(block, inp, sublayers)
    return rev_vjp(block, state, d_out, sublayers)
