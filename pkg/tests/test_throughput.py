"""Live throughput comparisons.

These take minutes and depend on the machine, so they only run when
``REVPROP_SLOW_TESTS=1`` is set.
"""
import os
import unittest
from typing import Dict

from revprop.bench.config import BenchConfig
from revprop.bench.config import parse_config
from revprop.bench.harness import BenchRecord
from revprop.bench.harness import run_bench
from revprop.engines import EngineKind

SLOW = os.environ.get("REVPROP_SLOW_TESTS") == "1"

DEEP = """\
model.depth = 12
model.width = 64
model.heads = 4
model.seq_len = 32
bench.engines = reprop, pareprop
bench.batch_sizes = 8
bench.steps = {steps}
bench.warmup = 2
bench.repeats = 3
bench.threads = 2
"""


def deep_config(steps: int = 10) -> BenchConfig:
    return parse_config(DEEP.format(steps=steps), environ={})


def by_engine(cfg: BenchConfig) -> Dict[EngineKind, BenchRecord]:
    return {r.engine: r for r in run_bench(cfg, write_csv=False).records}


@unittest.skipUnless(SLOW, "set REVPROP_SLOW_TESTS=1 to run")
class ThroughputTestCase(unittest.TestCase):
    records: Dict[EngineKind, BenchRecord]

    @classmethod
    def setUpClass(cls) -> None:
        cls.records = by_engine(deep_config())

    def ratio(self) -> float:
        pareprop = self.records[EngineKind.PAREPROP].throughput_mean
        reprop = self.records[EngineKind.REPROP].throughput_mean
        assert pareprop is not None and reprop is not None
        return pareprop / reprop

    def test_no_regression(self) -> None:
        """Test that pipelining is never meaningfully slower."""
        self.assertGreaterEqual(self.ratio(), 0.98)

    def test_overlap_gain(self) -> None:
        """Test that two lanes raise throughput on a deep model."""
        self.assertGreaterEqual(self.ratio(), 1.05)

    def test_stationary(self) -> None:
        """Test that doubling the timed steps keeps throughput within two deviations."""
        longer = by_engine(deep_config(steps=20))
        for engine, record in self.records.items():
            with self.subTest(engine=engine.value):
                assert record.throughput_mean is not None
                again = longer[engine].throughput_mean
                assert again is not None
                spread = 2 * max(
                    record.throughput_std or 0.0,
                    longer[engine].throughput_std or 0.0,
                )
                self.assertLessEqual(abs(again - record.throughput_mean), spread)


if __name__ == "__main__":
    unittest.main()
