"""Test cases for memory budget probes."""
import unittest

from revprop.bench.probe import MAX_BATCH
from revprop.bench.probe import batch_one_events
from revprop.bench.probe import max_batch_for
from revprop.bench.probe import probe
from revprop.bench.probe import probe_max_batch
from revprop.bench.probe import recommended_band
from revprop.engines import EngineKind
from revprop.engines import MemoryLedger
from revprop.engines import predict_peak
from revprop.engines import run_step
from revprop.exceptions import BudgetError
from revprop.models import ModelConfig
from revprop.models import ModelKind
from revprop.models import build_model
from revprop.models import make_batch
from revprop.tensor import DType
from revprop.tensor import Rng


def config(depth: int = 2) -> ModelConfig:
    return ModelConfig(
        kind=ModelKind.ISOTROPIC,
        depths=(depth,),
        width=8,
        heads=2,
        seq_len=8,
        dtype=DType.F32,
    )


class RecommendedBandTestCase(unittest.TestCase):
    def test_band(self) -> None:
        """Test the band between a third and a half of the maximum."""
        self.assertEqual(recommended_band(8), (3, 4))
        self.assertEqual(recommended_band(100), (33, 50))
        self.assertEqual(recommended_band(1024), (338, 512))

    def test_small_maximum(self) -> None:
        """Test that the band never drops below one."""
        self.assertEqual(recommended_band(1), (1, 1))
        self.assertEqual(recommended_band(2), (1, 1))


class MaxBatchTestCase(unittest.TestCase):
    def test_exact_budget(self) -> None:
        """Test that a budget equal to a batch's peak admits that batch."""
        cfg = config()
        events = batch_one_events(cfg, EngineKind.REPROP)
        budget = predict_peak(events, 8)
        self.assertEqual(max_batch_for(events, budget), 8)
        self.assertEqual(max_batch_for(events, budget - 1), 4)
        result = probe(cfg, EngineKind.REPROP, budget)
        self.assertEqual(result.max_batch, 8)
        self.assertEqual(result.peak_bytes, budget)
        self.assertEqual(result.band, (3, 4))

    def test_budget_too_small(self) -> None:
        """Test that a budget below a batch of one is an error."""
        with self.assertRaises(BudgetError):
            probe_max_batch(config(), EngineKind.VANILLA, 1)

    def test_non_positive_budget(self) -> None:
        """Test that a budget must be positive."""
        with self.assertRaises(BudgetError):
            max_batch_for([("a", 1)], 0)

    def test_cap(self) -> None:
        """Test that doubling stops at the largest supported batch."""
        self.assertEqual(max_batch_for([("a", 1), ("a", -1)], 1 << 40), MAX_BATCH)

    def test_predictions_match_real_steps(self) -> None:
        """Test that scaled batch-one events predict a real step's peak."""
        cfg = config()
        model = build_model(cfg, Rng(cfg.seed))
        for kind in EngineKind:
            with self.subTest(engine=kind.value):
                events = batch_one_events(cfg, kind)
                _, stats = run_step(
                    kind, model, make_batch(cfg, 4, Rng(1)), MemoryLedger()
                )
                self.assertEqual(stats.peak_activation_bytes, predict_peak(events, 4))

    def test_recomputation_fits_bigger_batches(self) -> None:
        """Test that recomputing engines fit larger batches in a deep model."""
        cfg = config(depth=8)
        vanilla_events = batch_one_events(cfg, EngineKind.VANILLA)
        budget = predict_peak(vanilla_events, 8)
        vanilla = probe_max_batch(cfg, EngineKind.VANILLA, budget)
        reprop = probe_max_batch(cfg, EngineKind.REPROP, budget)
        pareprop = probe_max_batch(cfg, EngineKind.PAREPROP, budget)
        self.assertEqual(vanilla, 8)
        self.assertGreater(reprop, vanilla)
        self.assertGreaterEqual(reprop, pareprop)
        self.assertGreater(pareprop, vanilla)


if __name__ == "__main__":
    unittest.main()
