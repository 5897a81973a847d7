"""Scaffolding shared by the training-step engines.

Every engine runs the same forward pass, loss, head and boundary backward.
They differ only in what the forward pass keeps and in how each stage's
blocks are walked backwards.

Ledger tags name what became live or was released:

* ``stage{s}.in`` / ``stage{s}.out``: the pairs kept at stage boundaries.
* ``head.pooled``: the head input.
* ``block{id}.stored``: a block's input and intermediates kept by the forward
  pass (store-everything only).
* ``block{id}.recompute`` / ``block{id}.release``: a block's recomputed
  input and intermediates becoming live, and being dropped after its VJP.
"""
from __future__ import annotations

import logging
from typing import Callable
from typing import Optional
from typing import Tuple

from revprop.exceptions import AccountingError
from revprop.models import Batch
from revprop.models import ForwardRecord
from revprop.models import Model
from revprop.models import Stage
from revprop.models import StageRecord
from revprop.models import boundary_backward
from revprop.models import embed_backward
from revprop.models import forward_full
from revprop.models import head_backward
from revprop.models import loss_and_grad_head
from revprop.models.model import BlockHook
from revprop.reversible import Coupled
from revprop.reversible import RecomputeState
from revprop.reversible import Sublayers
from revprop.reversible import rev_recompute
from revprop.reversible import rev_recompute_stored
from revprop.tensor import Tensor

from .ledger import MemoryLedger
from .stats import GradStore

logger = logging.getLogger(__name__)

StageBackward = Callable[[int, Stage, StageRecord, Coupled, GradStore], Coupled]


def recompute_block(
    stage: Stage,
    record: StageRecord,
    index: int,
    out: Coupled,
    sublayers: Sublayers,
) -> RecomputeState:
    """Recompute the input and intermediates of ``stage.blocks[index]``.

    The first block of a stage needs no inverse: its input is the stored
    stage input, so its intermediates are recomputed forward from there.
    """
    block = stage.blocks[index]
    if index == 0:
        return rev_recompute_stored(block, record.inp, sublayers)
    return rev_recompute(block, out, sublayers)


def recompute_bytes(state: RecomputeState, index: int) -> int:
    """Bytes made live by recomputing block _index_ of a stage."""
    recovered = state.inp.nbytes if index > 0 else 0
    return state.cache_nbytes + recovered


def release_bytes(state: RecomputeState, index: int, last: int) -> int:
    """Bytes dropped once block _index_'s VJP is done.

    The intermediates go, and so does the block's output if it was itself
    recomputed (every block but the last has the next block's recovered
    input as its output).
    """
    recovered = state.out.nbytes if index < last else 0
    return state.cache_nbytes + recovered


def track_forward(ledger: MemoryLedger, record: ForwardRecord) -> None:
    """Record the activations a forward pass retains."""
    for index, stage in enumerate(record.stages):
        ledger.alloc(f"stage{index}.in", stage.inp.nbytes)
        ledger.alloc(f"stage{index}.out", stage.out.nbytes)
    assert record.pooled is not None
    ledger.alloc("head.pooled", int(record.pooled.nbytes))


def run_backward(
    model: Model,
    batch: Batch,
    record: ForwardRecord,
    ledger: MemoryLedger,
    d_logits: Tensor,
    stage_backward: StageBackward,
) -> GradStore:
    """Backpropagate from the logits to the embedding, stage by stage."""
    grads = GradStore()
    d_out, grads.head_w = head_backward(model, record, d_logits)
    assert record.pooled is not None
    ledger.free("head.pooled", int(record.pooled.nbytes))

    for index in reversed(range(len(model.stages))):
        stage_record = record.stages[index]
        d_in = stage_backward(index, model.stages[index], stage_record, d_out, grads)
        ledger.free(f"stage{index}.out", stage_record.out.nbytes)
        ledger.free(f"stage{index}.in", stage_record.inp.nbytes)
        if index > 0:
            boundary = model.stages[index - 1].boundary
            assert boundary is not None
            d_out, grads.boundaries[index - 1] = boundary_backward(
                boundary,
                record.stages[index - 1].out,
                d_in,
            )
        else:
            grads.embed_w = embed_backward(model, batch, d_in)
        logger.debug("stage %d backward done", index)
    return grads


def execute_step(
    model: Model,
    batch: Batch,
    ledger: MemoryLedger,
    stage_backward: StageBackward,
    sublayers: Sublayers,
    on_block: Optional[BlockHook] = None,
) -> Tuple[GradStore, float, int]:
    """Forward, loss and backward. Returns ``(grads, loss, step_peak_bytes)``."""
    start = len(ledger.event_log)
    live_before = ledger.live_bytes

    try:
        logits, record = forward_full(model, batch, sublayers, on_block)
        track_forward(ledger, record)
        loss, d_logits = loss_and_grad_head(logits, batch.labels)
        grads = run_backward(model, batch, record, ledger, d_logits, stage_backward)
    except Exception:
        # An aborted step releases whatever it still holds.
        if ledger.live_bytes > live_before:
            ledger.free("step.aborted", ledger.live_bytes - live_before)
        raise

    if ledger.live_bytes != live_before:
        raise AccountingError(
            f"step left {ledger.live_bytes - live_before} activation bytes live"
        )
    return grads, loss, ledger.peak_since(start)
