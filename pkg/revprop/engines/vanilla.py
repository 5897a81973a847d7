"""Store-everything backpropagation."""
from __future__ import annotations

import logging
import time
from typing import Dict
from typing import Tuple

from revprop.models import Batch
from revprop.models import Model
from revprop.models import Stage
from revprop.models import StageRecord
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Coupled
from revprop.reversible import RecomputeState
from revprop.reversible import Sublayers
from revprop.reversible import rev_backward_stored

from .common import execute_step
from .ledger import MemoryLedger
from .stats import GradStore
from .stats import StepStats

logger = logging.getLogger(__name__)


def _stored_bytes(state: RecomputeState, index: int) -> int:
    # The first block's input is the stage input, which is tracked already.
    kept = state.inp.nbytes if index > 0 else 0
    return state.cache_nbytes + kept


def step_vanilla(
    model: Model,
    batch: Batch,
    ledger: MemoryLedger,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Tuple[GradStore, StepStats]:
    """One training step that keeps every block's activations from the forward pass.

    Peak activation memory grows linearly with depth.
    """
    stored: Dict[Tuple[int, int], RecomputeState] = {}

    def keep(stage_index: int, block_index: int, state: RecomputeState) -> None:
        block = model.stages[stage_index].blocks[block_index]
        stored[(stage_index, block_index)] = state
        ledger.alloc(f"block{block.block_id}.stored", _stored_bytes(state, block_index))

    def stage_backward(
        stage_index: int,
        stage: Stage,
        record: StageRecord,
        d_out: Coupled,
        grads: GradStore,
    ) -> Coupled:
        for index in reversed(range(len(stage.blocks))):
            block = stage.blocks[index]
            state = stored.pop((stage_index, index))
            d_out, grads.blocks[block.block_id] = rev_backward_stored(
                block, state.inp, d_out, sublayers, state=state
            )
            ledger.free(f"block{block.block_id}.stored", _stored_bytes(state, index))
        return d_out

    start = time.perf_counter_ns()
    grads, loss, peak = execute_step(
        model, batch, ledger, stage_backward, sublayers, on_block=keep
    )
    elapsed = time.perf_counter_ns() - start
    logger.debug("vanilla step: loss=%.6f peak=%d", loss, peak)
    return grads, StepStats(
        loss=loss,
        wall_ns=elapsed,
        peak_activation_bytes=peak,
        blocks_processed=model.config.total_depth,
        lane_busy_ns={"main": elapsed},
    )
