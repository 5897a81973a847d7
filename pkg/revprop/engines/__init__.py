"""Training-step engines, activation accounting and the pipeline model."""
from __future__ import annotations

from typing import Tuple

from revprop.models import Batch
from revprop.models import Model
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Sublayers

from .ledger import Event
from .ledger import MemoryLedger
from .ledger import ledger_track
from .ledger import predict_peak
from .optim import sgd_update
from .pareprop import step_pareprop
from .reprop import step_reprop
from .schedule import overlap_ratio
from .schedule import simulate_backward
from .stats import EngineKind
from .stats import GradStore
from .stats import StepStats
from .vanilla import step_vanilla


def run_step(
    kind: EngineKind,
    model: Model,
    batch: Batch,
    ledger: MemoryLedger,
    threads: int = 2,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> Tuple[GradStore, StepStats]:
    """Run one training step with the engine named by _kind_."""
    if kind is EngineKind.VANILLA:
        return step_vanilla(model, batch, ledger, sublayers)
    if kind is EngineKind.REPROP:
        return step_reprop(model, batch, ledger, sublayers)
    return step_pareprop(model, batch, ledger, sublayers, threads=threads)


__all__ = [
    "EngineKind",
    "Event",
    "GradStore",
    "MemoryLedger",
    "StepStats",
    "ledger_track",
    "overlap_ratio",
    "predict_peak",
    "run_step",
    "sgd_update",
    "simulate_backward",
    "step_pareprop",
    "step_reprop",
    "step_vanilla",
]
