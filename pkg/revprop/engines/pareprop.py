"""Pipelined reversible backpropagation.

Within each stage the backward pass runs as a two-lane software pipeline.
Lane ``R`` recomputes block ``i - 1``'s input and intermediates while lane
``G`` computes block ``i``'s gradients from what lane ``R`` produced in the
previous slot. For a stage of three blocks the slots are::

    [R3] [G3 | R2] [G2 | R1] [G1]

``R1`` needs no inverse. Its input is the stored stage input, so it is a
forward recompute of block one's intermediates.

Lanes meet at a rendezvous of capacity one, so lane ``R`` is never more than
one block ahead. Lane ``G`` runs on the controlling thread, which is also the
only thread that touches the ledger.
"""
from __future__ import annotations

import logging
import threading
import time
from queue import Queue
from types import TracebackType
from typing import TYPE_CHECKING
from typing import Callable
from typing import List
from typing import Optional
from typing import Tuple
from typing import Type
from typing import Union

from revprop.exceptions import SchedulerError
from revprop.models import Batch
from revprop.models import Model
from revprop.models import Stage
from revprop.models import StageRecord
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Coupled
from revprop.reversible import RecomputeState
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

Task = Callable[[], RecomputeState]
Outcome = Tuple[bool, Union[RecomputeState, BaseException], int]

# Queue is generic only in stubs.
if TYPE_CHECKING:
    TaskQueue = Queue[Optional[Task]]
    OutcomeQueue = Queue[Outcome]
else:
    TaskQueue = Queue
    OutcomeQueue = Queue


class InlineLane:
    """A recompute lane that runs its task on the calling thread.

    Tasks run when their result is asked for, after the gradient work of the
    same slot, so the slot log and ledger events match the threaded lane.
    """

    def __init__(self) -> None:
        self._task: Optional[Task] = None

    def submit(self, task: Task) -> None:
        """Queue _task_ for the current slot."""
        if self._task is not None:
            raise SchedulerError("recompute lane already holds a task")
        self._task = task

    def result(self) -> Tuple[RecomputeState, int]:
        """Run the queued task and return its state and busy nanoseconds."""
        task, self._task = self._task, None
        if task is None:
            raise SchedulerError("no recompute task was submitted")
        start = time.perf_counter_ns()
        try:
            state = task()
        except Exception as err:
            raise SchedulerError(f"recompute lane failed: {err}") from err
        return state, time.perf_counter_ns() - start

    def close(self) -> None:
        """Drop any unfinished task."""
        self._task = None

    def __enter__(self) -> InlineLane:
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        traceback: Optional[TracebackType],
    ) -> None:
        self.close()


class ThreadLane(InlineLane):
    """A recompute lane backed by a worker thread.

    Submitting hands a task across a capacity-one queue. Asking for the
    result blocks until the worker has finished it.
    """

    def __init__(self, name: str = "revprop-recompute") -> None:
        super().__init__()
        self._tasks: TaskQueue = Queue(maxsize=1)
        self._outcomes: OutcomeQueue = Queue(maxsize=1)
        self._pending = False
        self._thread = threading.Thread(target=self._worker, name=name, daemon=True)
        self._thread.start()

    def _worker(self) -> None:
        while True:
            task = self._tasks.get()
            if task is None:
                break
            start = time.perf_counter_ns()
            try:
                state = task()
            except BaseException as err:  # noqa: BLE001
                self._outcomes.put((False, err, 0))
                continue
            self._outcomes.put((True, state, time.perf_counter_ns() - start))

    def submit(self, task: Task) -> None:
        """Hand _task_ to the worker."""
        if self._pending:
            raise SchedulerError("recompute lane already holds a task")
        self._pending = True
        self._tasks.put(task)

    def result(self) -> Tuple[RecomputeState, int]:
        """Wait for the submitted task and return its state and busy nanoseconds."""
        if not self._pending:
            raise SchedulerError("no recompute task was submitted")
        ok, value, busy = self._outcomes.get()
        self._pending = False
        if isinstance(value, BaseException):
            raise SchedulerError(f"recompute lane failed: {value}") from value
        assert ok
        return value, busy

    def close(self) -> None:
        """Stop the worker, waiting for any task in flight."""
        self._tasks.put(None)
        self._thread.join()
        if self._pending:
            self._outcomes.get()
            self._pending = False


def open_lane(threads: int) -> InlineLane:
    """A threaded recompute lane, or an inline one when _threads_ is below two."""
    if threads < 1:
        raise SchedulerError(f"threads must be positive, got {threads}")
    return ThreadLane() if threads >= 2 else InlineLane()


def step_pareprop(
    model: Model,
    batch: Batch,
    ledger: MemoryLedger,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
    threads: int = 2,
) -> Tuple[GradStore, StepStats]:
    """One training step with recomputation overlapped with gradient computation.

    Gradients are bit-identical to :func:`revprop.engines.step_reprop`. With
    ``threads=1`` both lanes run on the calling thread.
    """
    schedule: List[Tuple[str, ...]] = []
    busy = {"R": 0, "G": 0}

    def stage_backward(
        stage_index: int,
        stage: Stage,
        record: StageRecord,
        d_out: Coupled,
        grads: GradStore,
    ) -> Coupled:
        def recompute(index: int, out: Coupled) -> Task:
            return lambda: recompute_block(stage, record, index, out, sublayers)

        last = len(stage.blocks) - 1
        lane.submit(recompute(last, record.out))
        held, busy_ns = lane.result()
        busy["R"] += busy_ns
        ledger.alloc(
            f"block{stage.blocks[last].block_id}.recompute",
            recompute_bytes(held, last),
        )
        schedule.append((f"R{last + 1}",))

        for index in reversed(range(len(stage.blocks))):
            block = stage.blocks[index]
            slot = [f"G{index + 1}"]
            if index > 0:
                lane.submit(recompute(index - 1, held.inp))
                slot.append(f"R{index}")

            start = time.perf_counter_ns()
            try:
                d_out, grads.blocks[block.block_id] = rev_vjp(
                    block, held, d_out, sublayers
                )
            except Exception as err:
                raise SchedulerError(f"gradient lane failed: {err}") from err
            busy["G"] += time.perf_counter_ns() - start

            ready: Optional[RecomputeState] = None
            if index > 0:
                ready, busy_ns = lane.result()
                busy["R"] += busy_ns
                ledger.alloc(
                    f"block{stage.blocks[index - 1].block_id}.recompute",
                    recompute_bytes(ready, index - 1),
                )
            ledger.free(
                f"block{block.block_id}.release", release_bytes(held, index, last)
            )
            schedule.append(tuple(slot))
            logger.debug("stage %d slot %s", stage_index, " | ".join(slot))

            if ready is not None:
                held = ready
        return d_out

    start = time.perf_counter_ns()
    with open_lane(threads) as lane:
        grads, loss, peak = execute_step(
            model, batch, ledger, stage_backward, sublayers
        )
    elapsed = time.perf_counter_ns() - start
    logger.debug("pareprop step: loss=%.6f peak=%d threads=%d", loss, peak, threads)
    return grads, StepStats(
        loss=loss,
        wall_ns=elapsed,
        peak_activation_bytes=peak,
        blocks_processed=model.config.total_depth,
        lane_busy_ns=busy,
        schedule=schedule,
    )
