"""Finite-difference gradient checks.

Analytic gradients are compared with central differences using a normwise
relative error, ``|a - n| / max(|a|, |n|)`` over each array.
"""
from __future__ import annotations

from typing import Callable
from typing import Dict
from typing import Optional
from typing import Sequence

import numpy as np

from revprop.layers import AttentionParams
from revprop.layers import MlpParams
from revprop.models import Batch
from revprop.models import Model
from revprop.models import forward_full
from revprop.models import loss_and_grad_head
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Coupled
from revprop.reversible import RevBlock
from revprop.reversible import Sublayers
from revprop.reversible import rev_backward_local
from revprop.reversible import rev_forward
from revprop.tensor import DType
from revprop.tensor import Rng
from revprop.tensor import Tensor

FD_EPS = 1e-6

Objective = Callable[[], float]


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    """Normwise relative error between two arrays. Zero if both are zero."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / scale


def numeric_grad(
    objective: Objective,
    array: Tensor,
    eps: float = FD_EPS,
    indices: Optional[Sequence[int]] = None,
) -> Tensor:
    """Central differences of _objective_ with respect to entries of _array_.

    _array_ is perturbed in place and restored. If _indices_ is given, only
    those flat positions are differenced and the result has one entry per
    index.
    """
    positions = range(array.size) if indices is None else indices
    grad = np.zeros(len(positions), dtype=np.float64)
    for n, flat in enumerate(positions):
        at = np.unravel_index(flat, array.shape)
        original = float(array[at])
        array[at] = original + eps
        plus = objective()
        array[at] = original - eps
        minus = objective()
        array[at] = original
        grad[n] = (plus - minus) / (2.0 * eps)
    return grad.reshape(array.shape) if indices is None else grad


def random_block(
    width: int,
    heads: int,
    rng: Rng,
    dtype: DType = DType.F64,
    mlp_ratio: int = 2,
    std: float = 0.3,
    window: Optional[int] = None,
    block_id: int = 0,
) -> RevBlock:
    """A block whose every parameter, norms and biases included, is Gaussian."""
    d, h = width, mlp_ratio * width

    def draw(name: str, *shape: int) -> Tensor:
        return rng.child(name).normal(shape, dtype, std)

    def around_one(name: str) -> Tensor:
        return draw(name, d) + dtype.numpy.type(1.0)

    f = AttentionParams(
        w_qkv=draw("f.w_qkv", d, 3 * d),
        w_out=draw("f.w_out", d, d),
        ln_gamma=around_one("f.ln_gamma"),
        ln_beta=draw("f.ln_beta", d),
        heads=heads,
        window=window,
    )
    g = MlpParams(
        w1=draw("g.w1", d, h),
        b1=draw("g.b1", h),
        w2=draw("g.w2", h, d),
        b2=draw("g.b2", d),
        ln_gamma=around_one("g.ln_gamma"),
        ln_beta=draw("g.ln_beta", d),
    )
    return RevBlock(f=f, g=g, block_id=block_id)


def check_block(
    block: RevBlock,
    inp: Coupled,
    rng: Rng,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
    eps: float = FD_EPS,
) -> Dict[str, float]:
    """Check a block's input and parameter gradients.

    The objective is a fixed random projection of the block's output. The
    analytic side runs the block's recompute-then-VJP backward, the numeric
    side runs only the forward pass.

    Returns:
        The relative error for each input half (``"i1"``, ``"i2"``) and
        each parameter (``"f.w_qkv"``, ``"g.w1"``, ...).
    """
    out = rev_forward(block, inp, sublayers)
    dtype = DType.of(out.i1)
    weights = Coupled(
        rng.child("w1").normal(out.shape, dtype),
        rng.child("w2").normal(out.shape, dtype),
    )

    def objective() -> float:
        o = rev_forward(block, inp, sublayers)
        return float(np.sum(o.i1 * weights.i1) + np.sum(o.i2 * weights.i2))

    _, d_inp, grads = rev_backward_local(block, out, weights, sublayers)

    errors = {
        "i1": relative_error(d_inp.i1, numeric_grad(objective, inp.i1, eps)),
        "i2": relative_error(d_inp.i2, numeric_grad(objective, inp.i2, eps)),
    }
    for prefix, params, cotangents in (
        ("f", block.f, grads.d_f),
        ("g", block.g, grads.d_g),
    ):
        analytic = cotangents.arrays()
        for name, array in params.arrays().items():
            errors[f"{prefix}.{name}"] = relative_error(
                analytic[name], numeric_grad(objective, array, eps)
            )
    return errors


def model_loss(
    model: Model,
    batch: Batch,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> float:
    """Mean cross-entropy of _model_ on _batch_."""
    logits, _ = forward_full(model, batch, sublayers)
    loss, _ = loss_and_grad_head(logits, batch.labels)
    return loss


def check_model(
    model: Model,
    batch: Batch,
    grads: Dict[str, Tensor],
    rng: Rng,
    per_array: int = 4,
    eps: float = FD_EPS,
) -> Dict[str, float]:
    """Check model gradients on a random subset of each parameter array.

    _grads_ maps dotted parameter names to analytic gradients, as produced by
    ``GradStore.named_arrays``. At most _per_array_ entries of each array are
    differenced.

    Returns:
        The relative error for each parameter name.
    """

    def objective() -> float:
        return model_loss(model, batch)

    errors: Dict[str, float] = {}
    for name, array in model.named_params():
        count = min(per_array, array.size)
        picks = rng.child(name).integers(0, array.size, count)
        indices = sorted(set(picks))
        numeric = numeric_grad(objective, array, eps, indices)
        analytic = grads[name].reshape(-1)[indices]
        errors[name] = relative_error(analytic, numeric)
    return errors


def jitter_params(model: Model, rng: Rng, std: float = 0.3) -> Model:
    """Return a copy of _model_ with Gaussian noise added to every parameter.

    Freshly initialized models have near-zero gradients in most blocks, where
    a relative error says little.
    """
    stream = rng.child("jitter")
    return model.map_params(lambda p: p + stream.normal(p.shape, DType.of(p), std))
