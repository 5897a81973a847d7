"""Largest batch that fits an activation memory budget.

Every tracked activation has the batch as its leading dimension, so a
step's ledger events at batch ``B`` are its batch-of-one events scaled by
``B``. A probe runs one step at batch one and replays its events.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List
from typing import Tuple

from revprop.engines import EngineKind
from revprop.engines import Event
from revprop.engines import MemoryLedger
from revprop.engines import predict_peak
from revprop.engines import run_step
from revprop.exceptions import BudgetError
from revprop.models import ModelConfig
from revprop.models import build_model
from revprop.models import make_batch
from revprop.tensor import Rng

logger = logging.getLogger(__name__)

# Stop doubling here whatever the budget.
MAX_BATCH = 1 << 30

# Recommended operating band, as fractions of the maximum batch.
BAND_LOW = 0.33
BAND_HIGH = 0.5


@dataclass(frozen=True)
class ProbeResult:
    """The outcome of probing one engine against a budget."""

    engine: EngineKind
    budget_bytes: int
    max_batch: int
    peak_bytes: int

    @property
    def band(self) -> Tuple[int, int]:
        """The recommended ``(low, high)`` batch sizes."""
        return recommended_band(self.max_batch)


def recommended_band(max_batch: int) -> Tuple[int, int]:
    """Batch sizes between 33% and 50% of _max_batch_, at least one."""
    low = max(1, math.ceil(max_batch * BAND_LOW))
    high = max(low, math.floor(max_batch * BAND_HIGH))
    return low, high


def batch_one_events(cfg: ModelConfig, engine: EngineKind) -> List[Event]:
    """Ledger events of one training step at batch size one."""
    model = build_model(cfg, Rng(cfg.seed))
    batch = make_batch(cfg, 1, Rng(cfg.seed).child("data"))
    ledger = MemoryLedger()
    run_step(engine, model, batch, ledger, threads=1)
    return list(ledger.event_log)


def max_batch_for(events: List[Event], byte_budget: int) -> int:
    """Largest power of two whose predicted peak fits _byte_budget_.

    Raises:
        BudgetError: If batch one does not fit.
    """
    if byte_budget < 1:
        raise BudgetError(f"budget must be positive, got {byte_budget}")
    if predict_peak(events, 1) > byte_budget:
        raise BudgetError(
            f"a batch of one needs {predict_peak(events, 1)} bytes, "
            f"over the budget of {byte_budget}"
        )
    batch = 1
    while batch < MAX_BATCH and predict_peak(events, batch * 2) <= byte_budget:
        batch *= 2
    return batch


def probe_max_batch(model: ModelConfig, engine: EngineKind, byte_budget: int) -> int:
    """Largest feasible power-of-two batch for _engine_ under _byte_budget_."""
    return probe(model, engine, byte_budget).max_batch


def probe(model: ModelConfig, engine: EngineKind, byte_budget: int) -> ProbeResult:
    """Probe _engine_ and report the maximum batch with its predicted peak."""
    events = batch_one_events(model, engine)
    max_batch = max_batch_for(events, byte_budget)
    result = ProbeResult(
        engine=engine,
        budget_bytes=byte_budget,
        max_batch=max_batch,
        peak_bytes=predict_peak(events, max_batch),
    )
    logger.info(
        "%s: max batch %d (%d bytes) under %d bytes",
        engine.value,
        max_batch,
        result.peak_bytes,
        byte_budget,
    )
    return result
