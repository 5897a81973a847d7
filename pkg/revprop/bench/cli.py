"""The ``revprop`` command line interface.

Commands:

* ``revprop bench [CONFIG]`` sweeps engines and batch sizes, writing a CSV
  file and printing a summary.
* ``revprop verify [CONFIG]`` runs the correctness suites on a small model.
* ``revprop probe [CONFIG] --budget-bytes N`` finds the largest batch each
  engine can fit in an activation memory budget.

Exit status is 0 on success, 1 if verification fails or a budget can't fit
a batch of one, and 2 for configuration or usage errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Dict
from typing import Mapping
from typing import Optional
from typing import Sequence

from revprop import __version__
from revprop.exceptions import BudgetError
from revprop.exceptions import ConfigError

from .config import BenchConfig
from .config import load_config
from .harness import run_bench
from .probe import probe
from .report import render_probe
from .report import render_summary
from .report import render_verify
from .verify import run_verify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

# Command line flags and the configuration keys they override.
FLAG_KEYS = {
    "seed": "model.seed",
    "dtype": "model.dtype",
    "out": "bench.out",
    "threads": "bench.threads",
    "engines": "bench.engines",
    "budget_bytes": "bench.budget_bytes",
    "locale": "report.locale",
}


def build_parser() -> argparse.ArgumentParser:
    """The argument parser for all commands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", help="a key = value configuration file")
    common.add_argument("--seed", help="initialization and data seed")
    common.add_argument("--dtype", choices=("f32", "f64"), help="precision")
    common.add_argument("--threads", help="lanes for the pipelined engine")
    common.add_argument("--engines", help="comma separated engines")
    common.add_argument("--locale", help="locale for formatting reports")
    common.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="logging threshold (default WARNING)",
    )

    parser = argparse.ArgumentParser(
        prog="revprop",
        description="Reversible backpropagation benchmarks and checks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", parents=[common], help="run a benchmark sweep")
    bench.add_argument("--out", help="CSV output path")
    bench.add_argument("--budget-bytes", help="activation memory budget")

    commands.add_parser("verify", parents=[common], help="run correctness suites")

    probe_cmd = commands.add_parser(
        "probe", parents=[common], help="find the largest batch under a budget"
    )
    probe_cmd.add_argument("--budget-bytes", required=True, help="activation budget")
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, str]:
    """Configuration overrides for the flags that were given."""
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def cmd_bench(cfg: BenchConfig) -> int:
    """Run a benchmark sweep and print its summary."""
    result = run_bench(cfg)
    print(render_summary(result, cfg.locale), end="")
    print(f"wrote {len(result.records)} records to {cfg.out_path}")
    return EXIT_OK


def cmd_verify(cfg: BenchConfig) -> int:
    """Run the correctness suites and print the report."""
    report = run_verify(cfg)
    print(render_verify(report, cfg.locale), end="")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_probe(cfg: BenchConfig) -> int:
    """Probe every configured engine against the budget."""
    if cfg.budget_bytes is None:  # pragma: no cover
        raise ConfigError("probe needs --budget-bytes")
    results = [probe(cfg.model, engine, cfg.budget_bytes) for engine in cfg.engines]
    print(render_probe(results, cfg.locale), end="")
    return EXIT_OK


COMMANDS = {
    "bench": cmd_bench,
    "verify": cmd_verify,
    "probe": cmd_probe,
}


def main(
    argv: Optional[Sequence[str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> int:
    """Run the command line interface and return an exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code == 0 else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = load_config(
            args.config,
            overrides_from(args),
            environ if environ is not None else os.environ,
        )
        logger.info("%s: %s", args.command, cfg)
        return COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"revprop: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as err:
        print(f"revprop: {err}", file=sys.stderr)
        return EXIT_FAILED
