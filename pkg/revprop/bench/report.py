"""Human-readable reports, rendered with Liquid templates."""
from __future__ import annotations

from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

from liquid import Environment

from revprop.engines import EngineKind

from .filters import ByteSize
from .filters import Number
from .filters import lpad
from .filters import pad
from .harness import BenchRecord
from .harness import BenchResult
from .probe import ProbeResult
from .verify import VerifyReport

SUMMARY_TEMPLATE = """\
{{ "engine" | pad: 10 }}{{ "batch" | lpad: 7 }}{{ "samples/s" | lpad: 14 }}\
{{ "std" | lpad: 10 }}{{ "peak" | lpad: 12 }}
{% for r in records -%}
{{ r.engine | pad: 10 }}{{ r.batch | lpad: 7 }}\
{%- if r.feasible -%}
{{ r.throughput_mean | decimal: 1 | lpad: 14 }}{{ r.throughput_std | decimal: 1 | lpad: 10 }}
{%- else -%}
{{ "infeasible" | lpad: 24 }}
{%- endif -%}
{{ r.peak_bytes | bytes | lpad: 12 }}
{% endfor -%}
{% for c in comparisons -%}
batch {{ c.batch }}:
{%- if c.speedup %} pareprop/reprop throughput {{ c.speedup | decimal: 3 }}{% endif %}
{%- if c.saving %} vanilla/reprop peak memory {{ c.saving | decimal: 2 }}{% endif %}
{% endfor -%}
{% for t in top -%}
top throughput {{ t.engine }}: {{ t.throughput | decimal: 1 }} samples/s at batch {{ t.batch }}
{% endfor -%}
"""

VERIFY_TEMPLATE = """\
{% for c in checks -%}
{% if c.passed %}PASS{% else %}FAIL{% endif %} {{ c.name | pad: 36 }} \
{{ c.measured | decimal: format: '0.00E0' }} {{ c.comparison }} \
{{ c.threshold | decimal: format: '0.00E0' }}\
{% if c.detail != "" %}  ({{ c.detail }}){% endif %}
{% endfor -%}
{{ passed }} of {{ total }} checks passed
"""

PROBE_TEMPLATE = """\
{% for p in probes -%}
{{ p.engine | pad: 10 }} max batch {{ p.max_batch | lpad: 6 }} \
(peak {{ p.peak_bytes | bytes }} of {{ p.budget_bytes | bytes }}), \
recommended batch {{ p.low }} to {{ p.high }}
{% endfor -%}
"""


def report_environment() -> Environment:
    """A Liquid environment with the report filters registered."""
    env = Environment()
    env.add_filter("decimal", Number())
    env.add_filter("bytes", ByteSize())
    env.add_filter("pad", pad)
    env.add_filter("lpad", lpad)
    return env


_ENV = report_environment()
SUMMARY = _ENV.from_string(SUMMARY_TEMPLATE)
VERIFY = _ENV.from_string(VERIFY_TEMPLATE)
PROBE = _ENV.from_string(PROBE_TEMPLATE)


def _record(record: BenchRecord) -> Dict[str, Any]:
    return {
        "engine": record.engine.value,
        "batch": record.batch,
        "feasible": record.feasible,
        "throughput_mean": record.throughput_mean,
        "throughput_std": record.throughput_std,
        "peak_bytes": record.peak_bytes,
    }


def _find(
    records: Sequence[BenchRecord],
    engine: EngineKind,
    batch: int,
) -> Optional[BenchRecord]:
    for record in records:
        if record.engine is engine and record.batch == batch and record.feasible:
            return record
    return None


def comparisons(records: Sequence[BenchRecord]) -> List[Dict[str, Any]]:
    """Per batch size, pipelined/sequential throughput and vanilla/reprop memory."""
    rows = []
    for batch in dict.fromkeys(record.batch for record in records):
        row: Dict[str, Any] = {"batch": batch}
        reprop = _find(records, EngineKind.REPROP, batch)
        pareprop = _find(records, EngineKind.PAREPROP, batch)
        vanilla = _find(records, EngineKind.VANILLA, batch)
        if reprop and pareprop:
            assert reprop.throughput_mean and pareprop.throughput_mean
            row["speedup"] = pareprop.throughput_mean / reprop.throughput_mean
        if reprop and vanilla and reprop.peak_bytes:
            row["saving"] = vanilla.peak_bytes / reprop.peak_bytes
        rows.append(row)
    return rows


def top_throughput(records: Sequence[BenchRecord]) -> List[Dict[str, Any]]:
    """Each engine's best throughput across batch sizes."""
    best: Dict[EngineKind, BenchRecord] = {}
    for record in records:
        if record.throughput_mean is None:
            continue
        current = best.get(record.engine)
        if current is None or record.throughput_mean > (current.throughput_mean or 0):
            best[record.engine] = record
    return [
        {
            "engine": engine.value,
            "throughput": record.throughput_mean,
            "batch": record.batch,
        }
        for engine, record in best.items()
    ]


def render_summary(result: BenchResult, locale: str = "en_US") -> str:
    """The benchmark summary table."""
    return SUMMARY.render(
        locale=locale,
        records=[_record(record) for record in result.records],
        comparisons=comparisons(result.records),
        top=top_throughput(result.records),
    )


def render_verify(report: VerifyReport, locale: str = "en_US") -> str:
    """One line per check, then a pass count."""
    return VERIFY.render(
        locale=locale,
        checks=[
            {
                "name": check.name,
                "passed": check.passed,
                "measured": check.measured,
                "threshold": check.threshold,
                "comparison": check.comparison,
                "detail": check.detail,
            }
            for check in report.checks
        ],
        passed=len(report.checks) - len(report.failures),
        total=len(report.checks),
    )


def render_probe(results: Sequence[ProbeResult], locale: str = "en_US") -> str:
    """Maximum batch sizes and recommended operating bands."""
    return PROBE.render(
        locale=locale,
        probes=[
            {
                "engine": result.engine.value,
                "max_batch": result.max_batch,
                "peak_bytes": result.peak_bytes,
                "budget_bytes": result.budget_bytes,
                "low": result.band[0],
                "high": result.band[1],
            }
            for result in results
        ],
    )
