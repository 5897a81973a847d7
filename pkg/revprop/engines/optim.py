"""Plain stochastic gradient descent."""
from __future__ import annotations

from revprop.models import Model
from revprop.models.model import Stage
from revprop.reversible import RevBlock
from revprop.tensor import Tensor

from .stats import GradStore


def sgd_update(model: Model, grads: GradStore, lr: float) -> Model:
    """Return a new model with ``p - lr * g`` for every parameter ``p``.

    Raises:
        MissingGradientError: If _grads_ lacks a parameterized component.
    """
    grads.check_complete(model)

    def step(param: Tensor, grad: Tensor) -> Tensor:
        return param - param.dtype.type(lr) * grad

    stages = []
    for index, stage in enumerate(model.stages):
        blocks = tuple(
            RevBlock(
                f=block.f.zip_map(grads.blocks[block.block_id].d_f, step),
                g=block.g.zip_map(grads.blocks[block.block_id].d_g, step),
                block_id=block.block_id,
            )
            for block in stage.blocks
        )
        boundary = stage.boundary
        if boundary is not None:
            boundary = boundary.zip_map(grads.boundaries[index], step)
        stages.append(Stage(blocks=blocks, boundary=boundary))

    assert grads.embed_w is not None and grads.head_w is not None
    return Model(
        config=model.config,
        embed_w=step(model.embed_w, grads.embed_w),
        stages=tuple(stages),
        head_w=step(model.head_w, grads.head_w),
    )
