"""Sequential reversible backpropagation."""
from __future__ import annotations

import logging
import time
from typing import Tuple

from revprop.models import Batch
from revprop.models import Model
from revprop.models import Stage
from revprop.models import StageRecord
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Coupled
from revprop.reversible import Sublayers
from revprop.reversible import rev_vjp

from .common import execute_step
from .common import recompute_block
from .common import recompute_bytes
from .common import release_bytes
from .ledger import MemoryLedger
from .stats import GradStore
from .stats import StepStats

logger = logging.getLogger(__name__)


def step_reprop(
    model: Model,
    batch: Batch,
    ledger: MemoryLedger,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Tuple[GradStore, StepStats]:
    """One training step that recomputes each block's activations from its output.

    Only stage-boundary activations are kept across the step, so peak
    activation memory does not grow with depth.
    """

    def stage_backward(
        stage_index: int,
        stage: Stage,
        record: StageRecord,
        d_out: Coupled,
        grads: GradStore,
    ) -> Coupled:
        last = len(stage.blocks) - 1
        out = record.out
        for index in reversed(range(len(stage.blocks))):
            block = stage.blocks[index]
            state = recompute_block(stage, record, index, out, sublayers)
            ledger.alloc(
                f"block{block.block_id}.recompute", recompute_bytes(state, index)
            )
            d_out, grads.blocks[block.block_id] = rev_vjp(
                block, state, d_out, sublayers
            )
            ledger.free(
                f"block{block.block_id}.release", release_bytes(state, index, last)
            )
            out = state.inp
        return d_out

    start = time.perf_counter_ns()
    grads, loss, peak = execute_step(model, batch, ledger, stage_backward, sublayers)
    elapsed = time.perf_counter_ns() - start
    logger.debug("reprop step: loss=%.6f peak=%d", loss, peak)
    return grads, StepStats(
        loss=loss,
        wall_ns=elapsed,
        peak_activation_bytes=peak,
        blocks_processed=model.config.total_depth,
        lane_busy_ns={"main": elapsed},
    )
