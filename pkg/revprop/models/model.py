"""Reversible models and their non-reversible pieces.

A model embeds ``[B, N, in_dim]`` inputs, duplicates the embedding into a
coupled pair, and runs one or more stages of reversible blocks. Between
stages the pair is fused, patch-merged and duplicated again. The head
averages the final pair, mean-pools over tokens and projects to class logits.

The forward pass keeps only each stage's input and output pair (plus the
pooled head input), never per-block activations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from revprop.exceptions import ShapeError
from revprop.layers import AttentionParams
from revprop.layers import BoundaryParams
from revprop.layers import FusionKind
from revprop.layers import MlpParams
from revprop.layers import fuse
from revprop.layers import fuse_average
from revprop.layers import fuse_vjp
from revprop.layers import patch_merge
from revprop.layers import patch_merge_vjp
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Coupled
from revprop.reversible import RecomputeState
from revprop.reversible import RevBlock
from revprop.reversible import Sublayers
from revprop.reversible import rev_forward
from revprop.reversible import rev_recompute_stored
from revprop.tensor import MatmulCache
from revprop.tensor import Rng
from revprop.tensor import Tensor
from revprop.tensor import matmul
from revprop.tensor import matmul_vjp

from .config import ModelConfig
from .data import Batch

logger = logging.getLogger(__name__)

INIT_STD = 0.02

BlockHook = Callable[[int, int, RecomputeState], None]
ParamFn = Callable[[Tensor], Tensor]
ParamZipFn = Callable[[Tensor, Tensor], Tensor]


@dataclass(frozen=True, eq=False)
class Stage:
    """The reversible blocks of one stage and the boundary that follows it."""

    blocks: Tuple[RevBlock, ...]
    boundary: Optional[BoundaryParams] = None


@dataclass(frozen=True, eq=False)
class Model:
    """Parameters of a reversible model."""

    config: ModelConfig
    embed_w: Tensor
    stages: Tuple[Stage, ...]
    head_w: Tensor

    def blocks(self) -> Iterator[RevBlock]:
        """Every reversible block, in forward order."""
        for stage in self.stages:
            yield from stage.blocks

    def named_params(self) -> Iterator[Tuple[str, Tensor]]:
        """Every parameter array with a stable dotted name, in a fixed order."""
        yield "embed_w", self.embed_w
        for index, stage in enumerate(self.stages):
            for block in stage.blocks:
                for name, array in block.f.arrays().items():
                    yield f"block{block.block_id}.f.{name}", array
                for name, array in block.g.arrays().items():
                    yield f"block{block.block_id}.g.{name}", array
            if stage.boundary is not None:
                for name, array in stage.boundary.arrays().items():
                    yield f"boundary{index}.{name}", array
        yield "head_w", self.head_w

    def map_params(self, fn: ParamFn) -> Model:
        """Return a copy with _fn_ applied to every parameter array."""
        stages = tuple(
            Stage(
                blocks=tuple(
                    RevBlock(f=b.f.map(fn), g=b.g.map(fn), block_id=b.block_id)
                    for b in stage.blocks
                ),
                boundary=stage.boundary.map(fn) if stage.boundary else None,
            )
            for stage in self.stages
        )
        return Model(self.config, fn(self.embed_w), stages, fn(self.head_w))

    def zip_params(self, other: Model, fn: ParamZipFn) -> Model:
        """Return a copy with ``fn(mine, theirs)`` applied to matching arrays.

        _other_ must share this model's config.
        """
        if other.config != self.config:
            raise ShapeError("cannot combine parameters of differently shaped models")
        stages = tuple(
            Stage(
                blocks=tuple(
                    RevBlock(
                        f=mine.f.zip_map(theirs.f, fn),
                        g=mine.g.zip_map(theirs.g, fn),
                        block_id=mine.block_id,
                    )
                    for mine, theirs in zip(stage.blocks, other_stage.blocks)
                ),
                boundary=(
                    stage.boundary.zip_map(other_stage.boundary, fn)
                    if stage.boundary is not None and other_stage.boundary is not None
                    else None
                ),
            )
            for stage, other_stage in zip(self.stages, other.stages)
        )
        return Model(
            self.config,
            fn(self.embed_w, other.embed_w),
            stages,
            fn(self.head_w, other.head_w),
        )


def num_params(model: Model) -> int:
    """Count scalar parameters."""
    return sum(int(array.size) for _, array in model.named_params())


def build_model(cfg: ModelConfig, rng: Rng) -> Model:
    """Initialize a model from truncated normals (std 0.02) with zero biases.

    Every parameter is drawn from its own named stream, so the result depends
    only on ``cfg`` and ``rng``.
    """
    dtype = cfg.dtype

    def draw(name: str, *shape: int) -> Tensor:
        return rng.child(name).truncated_normal(shape, dtype, INIT_STD)

    def ones(d: int) -> Tensor:
        return np.ones(d, dtype=dtype.numpy)

    def zeros(d: int) -> Tensor:
        return np.zeros(d, dtype=dtype.numpy)

    widths = cfg.stage_widths()
    grids = cfg.stage_grids()
    stages: List[Stage] = []
    block_id = 0
    for index, depth in enumerate(cfg.depths):
        d = widths[index]
        h = cfg.mlp_ratio * d
        blocks: List[RevBlock] = []
        for _ in range(depth):
            prefix = f"block{block_id}"
            f = AttentionParams(
                w_qkv=draw(f"{prefix}.f.w_qkv", d, 3 * d),
                w_out=draw(f"{prefix}.f.w_out", d, d),
                ln_gamma=ones(d),
                ln_beta=zeros(d),
                heads=cfg.heads,
                window=cfg.window,
            )
            g = MlpParams(
                w1=draw(f"{prefix}.g.w1", d, h),
                b1=zeros(h),
                w2=draw(f"{prefix}.g.w2", h, d),
                b2=zeros(d),
                ln_gamma=ones(d),
                ln_beta=zeros(d),
            )
            blocks.append(RevBlock(f=f, g=g, block_id=block_id))
            block_id += 1

        boundary = None
        if index + 1 < cfg.num_stages:
            fusion_w = None
            if cfg.fusion is FusionKind.MLP:
                fusion_w = draw(f"boundary{index}.fusion_w", 2 * d, d)
            boundary = BoundaryParams(
                merge_w=draw(
                    f"boundary{index}.merge_w", cfg.reduction * d, widths[index + 1]
                ),
                fusion_kind=cfg.fusion,
                fusion_w=fusion_w,
                grid=grids[index],
            )
        stages.append(Stage(blocks=tuple(blocks), boundary=boundary))

    model = Model(
        config=cfg,
        embed_w=draw("embed_w", cfg.input_dim, cfg.width),
        stages=tuple(stages),
        head_w=draw("head_w", widths[-1], cfg.num_classes),
    )
    logger.debug(
        "built %s model with %d blocks and %d parameters",
        cfg.kind.value,
        cfg.total_depth,
        num_params(model),
    )
    return model


@dataclass(frozen=True, eq=False)
class StageRecord:
    """The activations kept for one stage: its input and output pair."""

    inp: Coupled
    out: Coupled


@dataclass(eq=False)
class ForwardRecord:
    """Everything a forward pass retains for the backward pass."""

    stages: List[StageRecord] = field(default_factory=list)
    pooled: Optional[Tensor] = None

    def retained(self) -> List[object]:
        """Retained activation records: two pairs per stage plus the head input."""
        kept: List[object] = []
        for stage in self.stages:
            kept.extend((stage.inp, stage.out))
        if self.pooled is not None:
            kept.append(self.pooled)
        return kept


def embed(model: Model, batch: Batch) -> Coupled:
    """Embed the batch and duplicate it into a coupled pair."""
    if batch.inputs.shape[1:] != (model.config.seq_len, model.config.input_dim):
        raise ShapeError(
            f"inputs must be [B, {model.config.seq_len}, {model.config.input_dim}], "
            f"got {batch.inputs.shape}"
        )
    x = matmul(batch.inputs, model.embed_w)
    return Coupled(x, x)


def cross_boundary(boundary: BoundaryParams, out: Coupled) -> Coupled:
    """Fuse, merge and re-duplicate a stage's output pair."""
    fused, _ = fuse(out.i1, out.i2, boundary)
    merged, _ = patch_merge(fused, boundary)
    return Coupled(merged, merged)


def forward_full(
    model: Model,
    batch: Batch,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
    on_block: Optional[BlockHook] = None,
) -> Tuple[Tensor, ForwardRecord]:
    """Run the model forward, retaining only stage-boundary activations.

    If _on_block_ is given, it is called with ``(stage_index, block_index,
    state)`` for every block, where ``state`` carries the block's input and
    F/G intermediates. This is how a store-everything engine keeps them.
    """
    record = ForwardRecord()
    pair = embed(model, batch)
    for stage_index, stage in enumerate(model.stages):
        stage_in = pair
        for block_index, block in enumerate(stage.blocks):
            if on_block is None:
                pair = rev_forward(block, pair, sublayers)
            else:
                state = rev_recompute_stored(block, pair, sublayers)
                on_block(stage_index, block_index, state)
                pair = state.out
        record.stages.append(StageRecord(inp=stage_in, out=pair))
        if stage.boundary is not None:
            pair = cross_boundary(stage.boundary, pair)

    pooled = fuse_average(pair.i1, pair.i2).mean(axis=1)
    record.pooled = pooled
    return matmul(pooled, model.head_w), record


def head_backward(
    model: Model,
    record: ForwardRecord,
    d_logits: Tensor,
) -> Tuple[Coupled, Tensor]:
    """Backpropagate from the logits to the last stage's output pair.

    Returns ``(d_out, d_head_w)``.
    """
    assert record.pooled is not None
    d_pooled, d_head_w = matmul_vjp(MatmulCache(record.pooled, model.head_w), d_logits)
    shape = record.stages[-1].out.shape
    d_tokens = np.broadcast_to((d_pooled / shape[1])[:, None, :], shape)
    half = np.ascontiguousarray(d_tokens * 0.5)
    return Coupled(half, half.copy()), d_head_w


def boundary_backward(
    boundary: BoundaryParams,
    prev_out: Coupled,
    d_next_in: Coupled,
) -> Tuple[Coupled, BoundaryParams]:
    """Backpropagate through fuse, merge and duplicate.

    The fuse and merge intermediates are recomputed from the stored output of
    the previous stage. Returns ``(d_prev_out, boundary_grads)``.
    """
    d_merged = d_next_in.i1 + d_next_in.i2
    fused, fuse_cache = fuse(prev_out.i1, prev_out.i2, boundary)
    _, merge_cache = patch_merge(fused, boundary)
    d_fused, d_merge_w = patch_merge_vjp(merge_cache, d_merged)
    d_o1, d_o2, d_fusion_w = fuse_vjp(fuse_cache, d_fused)
    grads = BoundaryParams(
        merge_w=d_merge_w,
        fusion_kind=boundary.fusion_kind,
        fusion_w=d_fusion_w,
        grid=boundary.grid,
    )
    return Coupled(d_o1, d_o2), grads


def embed_backward(model: Model, batch: Batch, d_in: Coupled) -> Tensor:
    """Gradient of the embedding weights from the first stage's input cotangent."""
    d_embedded = d_in.i1 + d_in.i2
    _, d_embed_w = matmul_vjp(MatmulCache(batch.inputs, model.embed_w), d_embedded)
    return d_embed_w


def param_table(model: Model) -> Dict[str, Tensor]:
    """Parameters by dotted name."""
    return dict(model.named_params())
