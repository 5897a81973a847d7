"""Correctness suites for a small model.

:func:`run_verify` runs round-trip reconstruction, finite-difference,
engine parity, memory scaling, pipeline shape and makespan checks, and
reports each with its measured value and threshold.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from revprop.engines import EngineKind
from revprop.engines import GradStore
from revprop.engines import MemoryLedger
from revprop.engines import overlap_ratio
from revprop.engines import run_step
from revprop.exceptions import ConfigError
from revprop.gradcheck import check_block
from revprop.gradcheck import check_model
from revprop.gradcheck import jitter_params
from revprop.gradcheck import random_block
from revprop.gradcheck import relative_error
from revprop.models import ModelConfig
from revprop.models import ModelKind
from revprop.models import build_model
from revprop.models import embed
from revprop.models import make_batch
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import Coupled
from revprop.reversible import Sublayers
from revprop.reversible import rev_forward
from revprop.reversible import rev_inverse
from revprop.reversible import rev_recompute_stored
from revprop.tensor import DType
from revprop.tensor import Rng

from .config import BenchConfig

logger = logging.getLogger(__name__)

MAX_VERIFY_DEPTH = 4
MAX_VERIFY_WIDTH = 8

ROUND_TRIP_TRIALS = 20
ROUND_TRIP_TOL = {DType.F64: 1e-12, DType.F32: 1e-5}
FD_TOL = 1e-6
PARITY_TOL = {DType.F64: 1e-12, DType.F32: 1e-4}
MEMORY_DEPTHS = (2, 4, 8, 16)
FLAT_SLOPE = 0.1
EXTRA_BLOCKS = 2
MIN_SAVING = 3.0
MAKESPAN_DEPTHS = (1, 2, 4, 8, 16)
SCHEDULE_DEPTH = 3


@dataclass(frozen=True)
class CheckResult:
    """One verification check.

    ``measured`` and ``threshold`` are compared with ``comparison``, which
    is ``"<="``, ``"<"`` or ``">"``.
    """

    name: str
    measured: float
    threshold: float
    comparison: str = "<="
    detail: str = ""

    @property
    def passed(self) -> bool:
        """``True`` if the measured value satisfies the threshold."""
        if self.comparison == "<":
            return self.measured < self.threshold
        if self.comparison == ">":
            return self.measured > self.threshold
        return self.measured <= self.threshold


@dataclass
class VerifyReport:
    """The checks run by :func:`run_verify`, in order."""

    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """``True`` if every check passed."""
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        """Checks that did not pass."""
        return [check for check in self.checks if not check.passed]

    def add(self, check: CheckResult) -> None:
        """Record _check_, logging a failure."""
        if not check.passed:
            logger.warning(
                "check %s failed: %g %s %g",
                check.name,
                check.measured,
                check.comparison,
                check.threshold,
            )
        self.checks.append(check)


def _random_pair(rng: Rng, shape: Tuple[int, ...], dtype: DType) -> Coupled:
    return Coupled(
        rng.child("i1").normal(shape, dtype),
        rng.child("i2").normal(shape, dtype),
    )


def _grad_errors(mine: GradStore, theirs: GradStore) -> Tuple[float, int]:
    """Largest relative error and the number of arrays that differ at all."""
    expected = dict(theirs.named_arrays())
    worst = 0.0
    differing = 0
    for name, array in mine.named_arrays():
        worst = max(worst, relative_error(array, expected[name]))
        if not np.array_equal(array, expected[name]):
            differing += 1
    return worst, differing


def check_round_trip(cfg: ModelConfig, seed: int) -> List[CheckResult]:
    """Reconstruct random block inputs from their outputs."""
    results = []
    for dtype in dict.fromkeys((DType.F64, cfg.dtype)):
        worst = 0.0
        for trial in range(ROUND_TRIP_TRIALS):
            rng = Rng(seed).child(f"round-trip.{dtype.value}.{trial}")
            block = random_block(cfg.width, cfg.heads, rng, dtype)
            inp = _random_pair(rng, (2, cfg.seq_len, cfg.width), dtype)
            back = rev_inverse(block, rev_forward(block, inp))
            error = max(
                relative_error(back.i1, inp.i1),
                relative_error(back.i2, inp.i2),
            )
            worst = max(worst, error)
        results.append(
            CheckResult(
                name=f"round-trip {dtype.value}",
                measured=worst,
                threshold=ROUND_TRIP_TOL[dtype],
                detail=f"{ROUND_TRIP_TRIALS} random blocks",
            )
        )
    return results


def check_block_gradients(
    cfg: ModelConfig,
    seed: int,
    sublayers: Sublayers,
) -> CheckResult:
    """Finite differences on a single block, every input and parameter."""
    rng = Rng(seed).child("fd-block")
    tokens = min(cfg.seq_len, 4)
    block = random_block(cfg.width, cfg.heads, rng)
    inp = _random_pair(rng, (1, tokens, cfg.width), DType.F64)
    errors = check_block(block, inp, rng, sublayers)
    name, worst = max(errors.items(), key=lambda item: item[1])
    return CheckResult(
        name="finite-difference block",
        measured=worst,
        threshold=FD_TOL,
        detail=f"worst: {name}",
    )


def check_model_gradients(
    cfg: ModelConfig,
    seed: int,
    sublayers: Sublayers,
) -> CheckResult:
    """Finite differences on a sample of every parameter of the whole model."""
    model_cfg = dataclasses.replace(cfg, dtype=DType.F64)
    rng = Rng(seed).child("fd-model")
    model = jitter_params(build_model(model_cfg, Rng(model_cfg.seed)), rng)
    batch = make_batch(model_cfg, 2, rng)
    grads, _ = run_step(
        EngineKind.REPROP, model, batch, MemoryLedger(), sublayers=sublayers
    )
    errors = check_model(model, batch, dict(grads.named_arrays()), rng)
    name, worst = max(errors.items(), key=lambda item: item[1])
    return CheckResult(
        name="finite-difference model",
        measured=worst,
        threshold=FD_TOL,
        detail=f"worst: {name}",
    )


def check_parity(cfg: ModelConfig, seed: int, threads: int) -> List[CheckResult]:
    """Compare gradients across engines."""
    results = []
    for dtype in dict.fromkeys((DType.F64, cfg.dtype)):
        model_cfg = dataclasses.replace(cfg, dtype=dtype)
        model = build_model(model_cfg, Rng(model_cfg.seed))
        batch = make_batch(model_cfg, 2, Rng(seed).child("parity"))
        grads = {
            kind: run_step(kind, model, batch, MemoryLedger(), threads=threads)[0]
            for kind in EngineKind
        }
        error, _ = _grad_errors(grads[EngineKind.REPROP], grads[EngineKind.VANILLA])
        results.append(
            CheckResult(
                name=f"parity reprop/vanilla {dtype.value}",
                measured=error,
                threshold=PARITY_TOL[dtype],
            )
        )
        _, differing = _grad_errors(
            grads[EngineKind.PAREPROP], grads[EngineKind.REPROP]
        )
        results.append(
            CheckResult(
                name=f"parity pareprop/reprop {dtype.value}",
                measured=differing,
                threshold=0,
                detail="arrays not bit-identical",
            )
        )
    return results


def _peaks(cfg: ModelConfig, depths: Sequence[int]) -> Dict[EngineKind, List[int]]:
    peaks: Dict[EngineKind, List[int]] = {kind: [] for kind in EngineKind}
    for depth in depths:
        model_cfg = dataclasses.replace(cfg, depths=(depth,))
        model = build_model(model_cfg, Rng(model_cfg.seed))
        batch = make_batch(model_cfg, 1, Rng(model_cfg.seed).child("data"))
        for kind in EngineKind:
            _, stats = run_step(kind, model, batch, MemoryLedger(), threads=1)
            peaks[kind].append(stats.peak_activation_bytes)
    return peaks


def block_footprint(cfg: ModelConfig) -> int:
    """Bytes of one block's F and G intermediates at batch size one."""
    model = build_model(cfg, Rng(cfg.seed))
    batch = make_batch(cfg, 1, Rng(cfg.seed).child("data"))
    block = model.stages[0].blocks[0]
    return rev_recompute_stored(block, embed(model, batch)).cache_nbytes


def check_memory(cfg: ModelConfig) -> List[CheckResult]:
    """Peak activation memory against depth for isotropic models."""
    iso = dataclasses.replace(
        cfg,
        kind=ModelKind.ISOTROPIC,
        depths=(MEMORY_DEPTHS[0],),
        grid=None,
    )
    footprint = block_footprint(iso)
    peaks = _peaks(iso, MEMORY_DEPTHS)
    slopes = {
        kind: float(np.polyfit(MEMORY_DEPTHS, values, 1)[0])
        for kind, values in peaks.items()
    }
    extra = max(
        p - r for p, r in zip(peaks[EngineKind.PAREPROP], peaks[EngineKind.REPROP])
    )
    saving = peaks[EngineKind.VANILLA][-1] / peaks[EngineKind.REPROP][-1]
    detail = f"block footprint {footprint} bytes"
    return [
        CheckResult(
            "memory slope vanilla",
            slopes[EngineKind.VANILLA],
            footprint,
            ">",
            detail,
        ),
        CheckResult(
            "memory slope reprop",
            abs(slopes[EngineKind.REPROP]),
            FLAT_SLOPE * footprint,
            "<",
            detail,
        ),
        CheckResult(
            "memory slope pareprop",
            abs(slopes[EngineKind.PAREPROP]),
            FLAT_SLOPE * footprint,
            "<",
            detail,
        ),
        CheckResult(
            "memory pareprop extra",
            extra,
            EXTRA_BLOCKS * footprint,
            "<=",
            detail,
        ),
        CheckResult(
            f"memory saving at depth {MEMORY_DEPTHS[-1]}",
            saving,
            MIN_SAVING,
            ">",
            "vanilla peak / reprop peak",
        ),
    ]


def expected_schedule(depth: int) -> List[Tuple[str, ...]]:
    """Slot log of a pipelined backward pass over one _depth_-block stage."""
    slots: List[Tuple[str, ...]] = [(f"R{depth}",)]
    slots.extend((f"G{i}", f"R{i - 1}") for i in range(depth, 1, -1))
    slots.append(("G1",))
    return slots


def check_schedule(cfg: ModelConfig, threads: int) -> CheckResult:
    """The pipelined engine's slot log for a three-block stage."""
    model_cfg = dataclasses.replace(
        cfg,
        kind=ModelKind.ISOTROPIC,
        depths=(SCHEDULE_DEPTH,),
        grid=None,
    )
    model = build_model(model_cfg, Rng(model_cfg.seed))
    batch = make_batch(model_cfg, 1, Rng(model_cfg.seed).child("data"))
    _, stats = run_step(EngineKind.PAREPROP, model, batch, MemoryLedger(), threads)
    expected = expected_schedule(SCHEDULE_DEPTH)
    mismatched = sum(
        1 for got, want in zip(stats.schedule, expected) if got != want
    ) + abs(len(stats.schedule) - len(expected))
    return CheckResult(
        name="pipeline schedule",
        measured=mismatched,
        threshold=0,
        detail=" ".join("[" + " | ".join(slot) + "]" for slot in stats.schedule),
    )


def check_makespan() -> CheckResult:
    """Pipelined over sequential makespan with equal slot costs."""
    worst = Fraction(0)
    for depth in MAKESPAN_DEPTHS:
        worst = max(worst, abs(overlap_ratio(depth) - Fraction(depth + 1, 2 * depth)))
    return CheckResult(
        name="makespan ratio",
        measured=float(worst),
        threshold=0,
        detail="(L + 1) / 2L for L in " + ", ".join(map(str, MAKESPAN_DEPTHS)),
    )


def check_small(cfg: ModelConfig) -> None:
    """Raise ``ConfigError`` unless _cfg_ is small enough to verify."""
    if max(cfg.depths) > MAX_VERIFY_DEPTH or cfg.width > MAX_VERIFY_WIDTH:
        raise ConfigError(
            f"verification needs depth <= {MAX_VERIFY_DEPTH} and "
            f"width <= {MAX_VERIFY_WIDTH}, got depths {cfg.depths} "
            f"and width {cfg.width}"
        )


def run_verify(
    cfg: BenchConfig,
    sublayers: Sublayers = DEFAULT_SUBLAYERS,
) -> VerifyReport:
    """Run every correctness suite on ``cfg.model``.

    _sublayers_ replaces the attention and MLP functions in the
    finite-difference suites, so a deliberately broken VJP can be checked
    for detection.

    Raises:
        ConfigError: If the model is too large to verify.
    """
    model = cfg.model
    check_small(model)
    seed = model.seed
    report = VerifyReport()
    for check in check_round_trip(model, seed):
        report.add(check)
    report.add(check_block_gradients(model, seed, sublayers))
    report.add(check_model_gradients(model, seed, sublayers))
    for check in check_parity(model, seed, cfg.threads):
        report.add(check)
    for check in check_memory(model):
        report.add(check)
    report.add(check_schedule(model, cfg.threads))
    report.add(check_makespan())
    logger.info(
        "verification %s: %d of %d checks passed",
        "passed" if report.passed else "failed",
        len(report.checks) - len(report.failures),
        len(report.checks),
    )
    return report
