"""Benchmarks, verification suites, memory probes and their reports."""
from .config import BenchConfig
from .config import load_config
from .config import parse_config
from .harness import CSV_COLUMNS
from .harness import BenchRecord
from .harness import BenchResult
from .harness import run_bench
from .probe import ProbeResult
from .probe import probe
from .probe import probe_max_batch
from .probe import recommended_band
from .report import render_probe
from .report import render_summary
from .report import render_verify
from .verify import CheckResult
from .verify import VerifyReport
from .verify import run_verify

__all__ = [
    "BenchConfig",
    "BenchRecord",
    "BenchResult",
    "CSV_COLUMNS",
    "CheckResult",
    "ProbeResult",
    "VerifyReport",
    "load_config",
    "parse_config",
    "probe",
    "probe_max_batch",
    "recommended_band",
    "render_probe",
    "render_summary",
    "render_verify",
    "run_bench",
    "run_verify",
]
