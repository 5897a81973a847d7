"""Throughput and memory benchmarks."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from revprop.engines import EngineKind
from revprop.engines import Event
from revprop.engines import MemoryLedger
from revprop.engines import predict_peak
from revprop.engines import run_step
from revprop.engines import sgd_update
from revprop.exceptions import BudgetError
from revprop.models import Batch
from revprop.models import Model
from revprop.models import build_model
from revprop.models import make_batch
from revprop.tensor import Rng

from .config import BenchConfig
from .probe import batch_one_events
from .probe import max_batch_for

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "engine",
    "batch",
    "depth",
    "width",
    "seq_len",
    "throughput_mean",
    "throughput_std",
    "peak_bytes",
    "wall_ns_per_step",
)


@dataclass(frozen=True)
class BenchRecord:
    """Throughput and peak activation bytes of one engine and batch size.

    Timing fields are ``None`` for a batch that does not fit the budget.
    """

    engine: EngineKind
    batch: int
    depth: int
    width: int
    seq_len: int
    throughput_mean: Optional[float]
    throughput_std: Optional[float]
    peak_bytes: int
    wall_ns_per_step: Optional[int]

    @property
    def feasible(self) -> bool:
        """``False`` if this batch did not fit."""
        return self.throughput_mean is not None

    def csv_row(self) -> List[str]:
        """Cells in :data:`CSV_COLUMNS` order."""

        def timing(value: Optional[float], spec: str) -> str:
            return "" if value is None else format(value, spec)

        return [
            self.engine.value,
            str(self.batch),
            str(self.depth),
            str(self.width),
            str(self.seq_len),
            timing(self.throughput_mean, ".3f"),
            timing(self.throughput_std, ".3f"),
            str(self.peak_bytes),
            timing(self.wall_ns_per_step, "d"),
        ]


@dataclass
class BenchResult:
    """Benchmark records and, for each ``(engine, batch)``, the loss of every step.

    Loss traces cover the warmup and timed steps of the first repeat.
    """

    records: List[BenchRecord] = field(default_factory=list)
    losses: Dict[Tuple[EngineKind, int], List[float]] = field(default_factory=dict)


def write_csv_header(path: str) -> None:
    """Start a CSV file at _path_ with just the header row."""
    with Path(path).open("w", encoding="utf-8", newline="") as fd:
        csv.writer(fd).writerow(CSV_COLUMNS)


def append_csv_row(path: str, record: BenchRecord) -> None:
    """Append one record to the CSV file at _path_."""
    with Path(path).open("a", encoding="utf-8", newline="") as fd:
        csv.writer(fd).writerow(record.csv_row())


class _Bench:
    """One benchmark sweep: a fixed initial model and per-engine probes."""

    def __init__(self, cfg: BenchConfig) -> None:
        self.cfg = cfg
        self.model0 = build_model(cfg.model, Rng(cfg.model.seed))
        self._events: Dict[EngineKind, List[Event]] = {}

    def record(
        self,
        engine: EngineKind,
        batch: int,
        throughput: Optional[Tuple[float, float]],
        peak: int,
        wall_ns: Optional[int],
    ) -> BenchRecord:
        model = self.cfg.model
        return BenchRecord(
            engine=engine,
            batch=batch,
            depth=model.total_depth,
            width=model.width,
            seq_len=model.seq_len,
            throughput_mean=throughput[0] if throughput else None,
            throughput_std=throughput[1] if throughput else None,
            peak_bytes=peak,
            wall_ns_per_step=wall_ns,
        )

    def over_budget(self, engine: EngineKind, batch: int) -> Optional[int]:
        """The predicted peak if _batch_ exceeds the budget, else ``None``."""
        budget = self.cfg.budget_bytes
        if budget is None:
            return None
        if engine not in self._events:
            self._events[engine] = batch_one_events(self.cfg.model, engine)
        events = self._events[engine]
        predicted = predict_peak(events, batch)
        if predicted > budget:
            return predicted
        try:
            max_batch = max_batch_for(events, budget)
        except BudgetError:  # pragma: no cover
            return predicted
        if batch * 2 > max_batch:
            logger.warning(
                "%s: batch %d is above 50%% of the maximum batch %d; "
                "33%% to 50%% of the maximum is recommended",
                engine.value,
                batch,
                max_batch,
            )
        return None

    def step(
        self,
        engine: EngineKind,
        model: Model,
        batch: Batch,
        ledger: MemoryLedger,
    ) -> Tuple[Model, float]:
        grads, stats = run_step(engine, model, batch, ledger, threads=self.cfg.threads)
        return sgd_update(model, grads, self.cfg.lr), stats.loss

    def measure(
        self,
        engine: EngineKind,
        batch_size: int,
        losses: List[float],
    ) -> BenchRecord:
        cfg = self.cfg
        predicted = self.over_budget(engine, batch_size)
        if predicted is not None:
            logger.warning(
                "%s: batch %d needs %d bytes, over the budget of %d",
                engine.value,
                batch_size,
                predicted,
                cfg.budget_bytes,
            )
            return self.record(engine, batch_size, None, predicted, None)

        batch = make_batch(cfg.model, batch_size, Rng(cfg.model.seed).child("data"))
        rates: List[float] = []
        walls: List[int] = []
        peak = 0
        ledger = MemoryLedger()
        try:
            for repeat in range(cfg.repeats):
                model = self.model0
                ledger = MemoryLedger()
                for _ in range(cfg.warmup):
                    model, loss = self.step(engine, model, batch, ledger)
                    if repeat == 0:
                        losses.append(loss)

                start = time.perf_counter_ns()
                for _ in range(cfg.steps):
                    model, loss = self.step(engine, model, batch, ledger)
                    if repeat == 0:
                        losses.append(loss)
                elapsed = max(time.perf_counter_ns() - start, 1)

                rates.append(batch_size * cfg.steps / (elapsed / 1e9))
                walls.append(elapsed // cfg.steps)
                peak = max(peak, ledger.peak_bytes)
        except MemoryError:
            logger.warning("%s: batch %d ran out of memory", engine.value, batch_size)
            return self.record(
                engine, batch_size, None, max(peak, ledger.peak_bytes), None
            )

        mean = float(np.mean(rates))
        std = float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0
        logger.info(
            "%s: batch %d, %.1f samples/s, peak %d bytes",
            engine.value,
            batch_size,
            mean,
            peak,
        )
        return self.record(engine, batch_size, (mean, std), peak, int(np.mean(walls)))


def run_bench(cfg: BenchConfig, write_csv: bool = True) -> BenchResult:
    """Measure every engine at every batch size.

    Each ``(engine, batch)`` pair starts from the same initial model and the
    same synthetic batch. Each repeat runs ``cfg.warmup`` untimed steps, then
    ``cfg.steps`` timed steps, each a training step followed by an SGD update.

    If _write_csv_ is true, a header is written to ``cfg.out_path`` and a row
    is appended as each record completes.
    """
    if write_csv:
        write_csv_header(cfg.out_path)
    bench = _Bench(cfg)
    result = BenchResult()
    for engine in cfg.engines:
        for batch_size in cfg.batch_sizes:
            losses: List[float] = []
            record = bench.measure(engine, batch_size, losses)
            result.records.append(record)
            result.losses[(engine, batch_size)] = losses
            if write_csv:
                append_csv_row(cfg.out_path, record)
    return result
