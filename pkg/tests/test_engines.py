"""Test cases for the training-step engines."""
import itertools
import math
import threading
import unittest
from typing import Any
from typing import Dict
from typing import Tuple

import numpy as np
from numpy.testing import assert_array_equal

from revprop.engines import EngineKind
from revprop.engines import GradStore
from revprop.engines import MemoryLedger
from revprop.engines import run_step
from revprop.engines import step_pareprop
from revprop.engines import step_reprop
from revprop.engines import step_vanilla
from revprop.engines.pareprop import InlineLane
from revprop.engines.pareprop import ThreadLane
from revprop.engines.pareprop import open_lane
from revprop.exceptions import ConfigError
from revprop.exceptions import SchedulerError
from revprop.gradcheck import relative_error
from revprop.models import Batch
from revprop.models import Model
from revprop.models import ModelConfig
from revprop.models import ModelKind
from revprop.models import build_model
from revprop.models import make_batch
from revprop.reversible import DEFAULT_SUBLAYERS
from revprop.reversible import RecomputeState
from revprop.reversible import Sublayers
from revprop.tensor import DType
from revprop.tensor import Rng


def setup(
    depths: Tuple[int, ...] = (3,),
    dtype: DType = DType.F64,
    batch_size: int = 2,
) -> Tuple[Model, Batch]:
    kind = ModelKind.ISOTROPIC if len(depths) == 1 else ModelKind.HIERARCHICAL
    cfg = ModelConfig(
        kind=kind,
        depths=depths,
        width=8,
        heads=2,
        seq_len=8,
        dtype=dtype,
    )
    return build_model(cfg, Rng(0)), make_batch(cfg, batch_size, Rng(1))


def grads_by_name(grads: GradStore) -> Dict[str, Any]:
    return dict(grads.named_arrays())


def failing_recompute(after: int) -> Sublayers:
    """Sublayers whose G forward fails once it has been called _after_ times."""
    calls = itertools.count(1)

    def g_forward(x: Any, p: Any) -> Any:
        if next(calls) > after:
            raise RuntimeError("recompute failed")
        return DEFAULT_SUBLAYERS.g_forward(x, p)

    return DEFAULT_SUBLAYERS._replace(g_forward=g_forward)


def failing_gradient() -> Sublayers:
    """Sublayers whose attention VJP always fails."""

    def f_vjp(_cache: Any, _d_y: Any) -> Any:
        raise RuntimeError("gradient failed")

    return DEFAULT_SUBLAYERS._replace(f_vjp=f_vjp)


class EngineKindTestCase(unittest.TestCase):
    def test_parse(self) -> None:
        """Test engine names."""
        self.assertIs(EngineKind.parse(" RePROP "), EngineKind.REPROP)
        with self.assertRaises(ConfigError):
            EngineKind.parse("checkpoint")


class ParityTestCase(unittest.TestCase):
    def assert_close(self, a: GradStore, b: GradStore, tol: float) -> None:
        theirs = grads_by_name(b)
        mine = grads_by_name(a)
        self.assertEqual(mine.keys(), theirs.keys())
        for name, array in mine.items():
            with self.subTest(param=name):
                self.assertLessEqual(relative_error(array, theirs[name]), tol)

    def assert_identical(self, a: GradStore, b: GradStore) -> None:
        theirs = grads_by_name(b)
        mine = grads_by_name(a)
        self.assertEqual(mine.keys(), theirs.keys())
        for name, array in mine.items():
            with self.subTest(param=name):
                assert_array_equal(array, theirs[name])

    def test_reprop_matches_vanilla(self) -> None:
        """Test that recomputed gradients match stored ones in double precision."""
        model, batch = setup()
        vanilla, v_stats = step_vanilla(model, batch, MemoryLedger())
        reprop, r_stats = step_reprop(model, batch, MemoryLedger())
        self.assert_close(reprop, vanilla, 1e-12)
        self.assertAlmostEqual(v_stats.loss, r_stats.loss, places=12)

    def test_reprop_matches_vanilla_f32(self) -> None:
        """Test that recomputed gradients match stored ones in single precision."""
        model, batch = setup(dtype=DType.F32)
        vanilla, _ = step_vanilla(model, batch, MemoryLedger())
        reprop, _ = step_reprop(model, batch, MemoryLedger())
        self.assert_close(reprop, vanilla, 1e-4)

    def test_pareprop_is_bit_identical(self) -> None:
        """Test that the pipelined engine reproduces sequential gradients exactly."""
        model, batch = setup()
        reprop, r_stats = step_reprop(model, batch, MemoryLedger())
        for threads in (1, 2):
            with self.subTest(threads=threads):
                pareprop, p_stats = step_pareprop(
                    model, batch, MemoryLedger(), threads=threads
                )
                self.assert_identical(pareprop, reprop)
                self.assertEqual(p_stats.loss, r_stats.loss)

    def test_pareprop_f32_is_bit_identical(self) -> None:
        """Test exact agreement in single precision over many seeds."""
        cfg = ModelConfig(
            kind=ModelKind.ISOTROPIC,
            depths=(2,),
            width=8,
            heads=2,
            seq_len=8,
            dtype=DType.F32,
        )
        for seed in range(50):
            with self.subTest(seed=seed):
                model = build_model(cfg, Rng(seed))
                batch = make_batch(cfg, 2, Rng(seed).child("data"))
                reprop, _ = step_reprop(model, batch, MemoryLedger())
                pareprop, _ = step_pareprop(model, batch, MemoryLedger())
                self.assert_identical(pareprop, reprop)

    def test_zero_model_loss(self) -> None:
        """Test that a model with every parameter zero has loss ln C."""
        model, batch = setup()
        zero = model.map_params(np.zeros_like)
        for kind in EngineKind:
            with self.subTest(engine=kind.value):
                _, stats = run_step(kind, zero, batch, MemoryLedger())
                self.assertAlmostEqual(
                    stats.loss, math.log(model.config.num_classes), places=12
                )

    def test_hierarchical_parity(self) -> None:
        """Test engine agreement across stage boundaries."""
        model, batch = setup(depths=(2, 2))
        vanilla, _ = step_vanilla(model, batch, MemoryLedger())
        reprop, _ = step_reprop(model, batch, MemoryLedger())
        pareprop, _ = step_pareprop(model, batch, MemoryLedger())
        self.assert_close(reprop, vanilla, 1e-12)
        self.assert_identical(pareprop, reprop)
        self.assertIn("boundary0.merge_w", grads_by_name(reprop))

    def test_complete_gradients(self) -> None:
        """Test that every engine produces a gradient for every parameter."""
        model, batch = setup(depths=(1, 2))
        expected = [name for name, _ in model.named_params()]
        for kind in EngineKind:
            with self.subTest(engine=kind.value):
                grads, _ = run_step(kind, model, batch, MemoryLedger())
                grads.check_complete(model)
                self.assertEqual(sorted(grads_by_name(grads)), sorted(expected))
                for name, array in model.named_params():
                    self.assertEqual(grads_by_name(grads)[name].shape, array.shape)

    def test_deterministic(self) -> None:
        """Test that repeated steps give bit-identical gradients."""
        model, batch = setup()
        for kind in EngineKind:
            with self.subTest(engine=kind.value):
                a, _ = run_step(kind, model, batch, MemoryLedger())
                b, _ = run_step(kind, model, batch, MemoryLedger())
                self.assert_identical(a, b)


class MemoryTestCase(unittest.TestCase):
    def peaks(self, kind: EngineKind, depths: Tuple[int, ...]) -> list:
        result = []
        for depth in depths:
            model, batch = setup(depths=(depth,), batch_size=1)
            _, stats = run_step(kind, model, batch, MemoryLedger(), threads=1)
            result.append(stats.peak_activation_bytes)
        return result

    def test_ledger_balances(self) -> None:
        """Test that a step releases every byte it tracks."""
        model, batch = setup(depths=(2, 2))
        for kind in EngineKind:
            with self.subTest(engine=kind.value):
                ledger = MemoryLedger()
                _, stats = run_step(kind, model, batch, ledger)
                self.assertEqual(ledger.live_bytes, 0)
                self.assertGreater(stats.peak_activation_bytes, 0)
                self.assertEqual(stats.peak_activation_bytes, ledger.peak_bytes)

    def test_vanilla_grows_with_depth(self) -> None:
        """Test that storing every block's activations grows with depth."""
        peaks = self.peaks(EngineKind.VANILLA, (2, 4, 8))
        self.assertLess(peaks[0], peaks[1])
        self.assertLess(peaks[1], peaks[2])

    def test_reprop_is_flat(self) -> None:
        """Test that recomputation keeps peak memory constant in depth."""
        peaks = self.peaks(EngineKind.REPROP, (4, 8))
        self.assertEqual(peaks[0], peaks[1])

    def test_pareprop_is_flat(self) -> None:
        """Test that the pipelined engine keeps peak memory constant in depth."""
        peaks = self.peaks(EngineKind.PAREPROP, (4, 8))
        self.assertEqual(peaks[0], peaks[1])

    def test_pareprop_holds_at_most_one_extra_block(self) -> None:
        """Test the pipelined engine's extra memory over the sequential one."""
        model, batch = setup(depths=(4,), batch_size=1)
        _, reprop = step_reprop(model, batch, MemoryLedger())
        _, pareprop = step_pareprop(model, batch, MemoryLedger(), threads=1)
        extra = pareprop.peak_activation_bytes - reprop.peak_activation_bytes
        self.assertGreater(extra, 0)
        vanilla_model, vanilla_batch = setup(depths=(1,), batch_size=1)
        _, vanilla = step_vanilla(vanilla_model, vanilla_batch, MemoryLedger())
        self.assertLess(extra, vanilla.peak_activation_bytes)

    def test_events_do_not_depend_on_threads(self) -> None:
        """Test that both lane kinds record the same ledger events."""
        model, batch = setup()
        inline = MemoryLedger()
        threaded = MemoryLedger()
        step_pareprop(model, batch, inline, threads=1)
        step_pareprop(model, batch, threaded, threads=2)
        self.assertEqual(inline.event_log, threaded.event_log)

    def test_ledger_spans_steps(self) -> None:
        """Test that a shared ledger reports each step's own peak."""
        model, batch = setup()
        ledger = MemoryLedger()
        _, first = step_reprop(model, batch, ledger)
        _, second = step_reprop(model, batch, ledger)
        self.assertEqual(first.peak_activation_bytes, second.peak_activation_bytes)
        self.assertEqual(ledger.peak_bytes, first.peak_activation_bytes)


class PipelineTestCase(unittest.TestCase):
    def test_schedule(self) -> None:
        """Test the slot log of a three-block stage."""
        model, batch = setup(depths=(3,))
        for threads in (1, 2):
            with self.subTest(threads=threads):
                _, stats = step_pareprop(model, batch, MemoryLedger(), threads=threads)
                self.assertEqual(
                    stats.schedule,
                    [("R3",), ("G3", "R2"), ("G2", "R1"), ("G1",)],
                )

    def test_schedule_per_stage(self) -> None:
        """Test that each stage runs its own pipeline, last stage first."""
        model, batch = setup(depths=(1, 2))
        _, stats = step_pareprop(model, batch, MemoryLedger())
        self.assertEqual(
            stats.schedule,
            [("R2",), ("G2", "R1"), ("G1",), ("R1",), ("G1",)],
        )

    def test_lane_busy_time(self) -> None:
        """Test that both lanes report busy time."""
        model, batch = setup()
        _, stats = step_pareprop(model, batch, MemoryLedger())
        self.assertEqual(set(stats.lane_busy_ns), {"R", "G"})
        self.assertGreater(stats.lane_busy_ns["R"], 0)
        self.assertGreater(stats.lane_busy_ns["G"], 0)
        self.assertEqual(stats.blocks_processed, 3)

    def test_sequential_lane(self) -> None:
        """Test that sequential engines report a single lane."""
        model, batch = setup()
        _, stats = step_reprop(model, batch, MemoryLedger())
        self.assertEqual(set(stats.lane_busy_ns), {"main"})
        self.assertEqual(stats.schedule, [])

    def test_lane_failure(self) -> None:
        """Test that a failing recompute lane aborts the step."""
        model, batch = setup(depths=(2,))
        for threads in (1, 2):
            with self.subTest(threads=threads):
                # The forward pass calls G once per block.
                sublayers = failing_recompute(after=2)
                ledger = MemoryLedger()
                with self.assertRaises(SchedulerError):
                    step_pareprop(model, batch, ledger, sublayers, threads=threads)
                self.assertEqual(ledger.live_bytes, 0)

    def test_gradient_lane_failure(self) -> None:
        """Test that a failing gradient lane aborts the step and frees its bytes."""
        model, batch = setup(depths=(2,))
        for threads in (1, 2):
            with self.subTest(threads=threads):
                ledger = MemoryLedger()
                with self.assertRaises(SchedulerError) as raised:
                    step_pareprop(
                        model, batch, ledger, failing_gradient(), threads=threads
                    )
                self.assertIsInstance(raised.exception.__cause__, RuntimeError)
                self.assertEqual(ledger.live_bytes, 0)
                self.assertGreater(ledger.peak_bytes, 0)

    def test_open_lane(self) -> None:
        """Test lane selection by thread count."""
        with open_lane(1) as lane:
            self.assertNotIsInstance(lane, ThreadLane)
        with open_lane(2) as lane:
            self.assertIsInstance(lane, ThreadLane)
        with self.assertRaises(SchedulerError):
            open_lane(0)

    def test_lane_protocol(self) -> None:
        """Test that a lane holds one task at a time."""
        dummy: Any = object()
        for lane in (InlineLane(), ThreadLane()):
            with self.subTest(lane=type(lane).__name__):
                with lane:
                    with self.assertRaises(SchedulerError):
                        lane.result()
                    lane.submit(lambda: dummy)
                    with self.assertRaises(SchedulerError):
                        lane.submit(lambda: dummy)
                    state, busy = lane.result()
                    self.assertIs(state, dummy)
                    self.assertGreaterEqual(busy, 0)

    def test_threaded_lane_runs_off_thread(self) -> None:
        """Test that a threaded lane runs tasks on its worker thread."""
        seen = []

        def task() -> RecomputeState:
            seen.append(threading.current_thread().name)
            return object()  # type: ignore

        with ThreadLane(name="test-lane") as lane:
            lane.submit(task)
            lane.result()
        self.assertEqual(seen, ["test-lane"])


class RunStepTestCase(unittest.TestCase):
    def test_dispatch(self) -> None:
        """Test that each engine kind runs its own engine."""
        model, batch = setup()
        _, vanilla = run_step(EngineKind.VANILLA, model, batch, MemoryLedger())
        _, pareprop = run_step(EngineKind.PAREPROP, model, batch, MemoryLedger())
        self.assertEqual(vanilla.schedule, [])
        self.assertEqual(len(pareprop.schedule), 4)

    def test_losses_agree(self) -> None:
        """Test that every engine reports the same loss."""
        model, batch = setup()
        losses = [
            run_step(kind, model, batch, MemoryLedger())[1].loss for kind in EngineKind
        ]
        self.assertTrue(np.allclose(losses, losses[0], rtol=0, atol=1e-12))


if __name__ == "__main__":
    unittest.main()
