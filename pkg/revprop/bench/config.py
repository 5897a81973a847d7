"""Benchmark configuration files.

A configuration file is flat UTF-8 text, one ``key = value`` pair per line,
with ``#`` comments and dotted keys::

    # A small isotropic model.
    model.depth = 4
    model.width = 8
    bench.engines = reprop, pareprop
    bench.batch_sizes = 1, 2, 4

Every key is optional. Values given on the command line take priority over
the environment (``REVPROP_THREADS``), which takes priority over the file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from typing import Dict
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Tuple
from typing import TypeVar
from typing import Union

from revprop.engines import EngineKind
from revprop.exceptions import ConfigError
from revprop.layers import FusionKind
from revprop.models import ModelConfig
from revprop.models import ModelKind
from revprop.tensor import DType

THREADS_ENV = "REVPROP_THREADS"

T = TypeVar("T")


@dataclass(frozen=True)
class BenchConfig:
    """Everything a benchmark, verification or probe run needs.

    :param model: The model to build, from ``model.*`` keys.
    :param engines: Engines to run, in order.
    :param batch_sizes: Batch sizes to sweep, in order.
    :param steps: Timed steps per repeat.
    :param warmup: Untimed steps before each repeat.
    :param repeats: Independent repeats, each starting from the initial model.
    :param threads: Lanes available to the pipelined engine.
    :param out_path: CSV output path.
    :param lr: SGD learning rate.
    :param budget_bytes: Activation memory budget, or ``None`` for no limit.
    :param locale: Locale used to format reports.
    """

    model: ModelConfig
    engines: Tuple[EngineKind, ...] = tuple(EngineKind)
    batch_sizes: Tuple[int, ...] = (1, 2, 4)
    steps: int = 10
    warmup: int = 2
    repeats: int = 3
    threads: int = 2
    out_path: str = "revprop-bench.csv"
    lr: float = 0.01
    budget_bytes: Optional[int] = None
    locale: str = "en_US"

    def __post_init__(self) -> None:
        if not self.engines:
            raise ConfigError("at least one engine is required")
        if not self.batch_sizes or any(b < 1 for b in self.batch_sizes):
            raise ConfigError("batch sizes must be positive integers")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.warmup < 0:
            raise ConfigError("warmup must not be negative")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.budget_bytes is not None and self.budget_bytes < 1:
            raise ConfigError("budget_bytes must be positive")


class Setting(NamedTuple):
    """A raw configuration value and where it came from."""

    value: str
    lineno: Optional[int] = None
    filename: Optional[str] = None


MODEL_KEYS = (
    "model.kind",
    "model.depth",
    "model.depths",
    "model.width",
    "model.heads",
    "model.mlp_ratio",
    "model.seq_len",
    "model.in_dim",
    "model.window",
    "model.grid",
    "model.fusion",
    "model.num_classes",
    "model.dtype",
    "model.seed",
)

BENCH_KEYS = (
    "bench.engines",
    "bench.batch_sizes",
    "bench.steps",
    "bench.warmup",
    "bench.repeats",
    "bench.threads",
    "bench.out",
    "bench.lr",
    "bench.budget_bytes",
    "report.locale",
)

KNOWN_KEYS = frozenset(MODEL_KEYS + BENCH_KEYS)

# A tiny isotropic model, small enough for the verification suites.
DEFAULT_MODEL = {
    "model.kind": "isotropic",
    "model.depth": "2",
    "model.width": "8",
    "model.heads": "2",
    "model.seq_len": "8",
}


def parse_settings(text: str, filename: Optional[str] = None) -> Dict[str, Setting]:
    """Split configuration _text_ into settings, checking keys but not values."""
    settings: Dict[str, Setting] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(
                f"expected 'key = value', found {content!r}",
                lineno=lineno,
                filename=filename,
            )
        if key not in KNOWN_KEYS:
            raise ConfigError(
                f"unknown key {key!r}", lineno=lineno, filename=filename
            )
        if key in settings:
            raise ConfigError(
                f"duplicate key {key!r}", lineno=lineno, filename=filename
            )
        settings[key] = Setting(value.strip(), lineno, filename)
    return settings


def _convert(setting: Setting, key: str, fn: Callable[[str], T]) -> T:
    try:
        return fn(setting.value)
    except (ValueError, ConfigError) as err:
        message = err.message if isinstance(err, ConfigError) else str(err)
        raise ConfigError(
            f"invalid value for {key}: {message}",
            lineno=setting.lineno,
            filename=setting.filename,
        ) from err


def _int_list(value: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in value.split(",") if item.strip())


def _engines(value: str) -> Tuple[EngineKind, ...]:
    return tuple(EngineKind.parse(item) for item in value.split(",") if item.strip())


def _grid(value: str) -> Tuple[int, int]:
    height, sep, width = value.lower().partition("x")
    if not sep:
        raise ValueError(f"expected HxW, found {value!r}")
    return int(height), int(width)


def _optional_int(value: str) -> Optional[int]:
    return None if value.lower() in ("", "none") else int(value)


def build_config(settings: Mapping[str, Setting]) -> BenchConfig:
    """Convert validated settings into a :class:`BenchConfig`."""
    merged = {key: Setting(value) for key, value in DEFAULT_MODEL.items()}
    if "model.depths" in settings:
        merged.pop("model.depth")
    merged.update(settings)
    if "model.depth" in merged and "model.depths" in merged:
        setting = merged["model.depths"]
        raise ConfigError(
            "model.depth and model.depths are mutually exclusive",
            lineno=setting.lineno,
            filename=setting.filename,
        )

    def get(key: str, fn: Callable[[str], T], default: T) -> T:
        if key not in merged:
            return default
        return _convert(merged[key], key, fn)

    if "model.depths" in merged:
        depths = get("model.depths", _int_list, ())
    else:
        depths = (get("model.depth", int, 2),)

    model = ModelConfig(
        kind=get("model.kind", ModelKind.parse, ModelKind.ISOTROPIC),
        depths=depths,
        width=get("model.width", int, 8),
        heads=get("model.heads", int, 2),
        seq_len=get("model.seq_len", int, 8),
        in_dim=get("model.in_dim", _optional_int, None),
        mlp_ratio=get("model.mlp_ratio", int, 4),
        window=get("model.window", _optional_int, None),
        grid=get("model.grid", _grid, None),
        fusion=get("model.fusion", FusionKind.parse, FusionKind.AVERAGE),
        num_classes=get("model.num_classes", int, 10),
        dtype=get("model.dtype", DType.parse, DType.F32),
        seed=get("model.seed", int, 0),
    )
    return BenchConfig(
        model=model,
        engines=get("bench.engines", _engines, tuple(EngineKind)),
        batch_sizes=get("bench.batch_sizes", _int_list, (1, 2, 4)),
        steps=get("bench.steps", int, 10),
        warmup=get("bench.warmup", int, 2),
        repeats=get("bench.repeats", int, 3),
        threads=get("bench.threads", int, 2),
        out_path=get("bench.out", str, "revprop-bench.csv"),
        lr=get("bench.lr", float, 0.01),
        budget_bytes=get("bench.budget_bytes", _optional_int, None),
        locale=get("report.locale", str, "en_US"),
    )


def parse_config(
    text: str,
    filename: Optional[str] = None,
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> BenchConfig:
    """Parse configuration _text_, then apply the environment and _overrides_.

    Args:
        text: ``key = value`` configuration text.
        filename: Used in error messages.
        overrides: Dotted keys with values that replace those from _text_,
            typically from command line flags.
        environ: Environment variables. Only ``REVPROP_THREADS`` is read.

    Raises:
        ConfigError: If a key is unknown, a line is malformed or a value is
            invalid.
    """
    settings = parse_settings(text, filename)
    environ = environ if environ is not None else {}
    if THREADS_ENV in environ and environ[THREADS_ENV].strip():
        settings["bench.threads"] = Setting(environ[THREADS_ENV], filename=THREADS_ENV)
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        settings[key] = Setting(value)
    return build_config(settings)


def load_config(
    path: Union[str, Path, None],
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> BenchConfig:
    """Read a configuration file, or use defaults if _path_ is ``None``."""
    if path is None:
        text, filename = "", None
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"can't read config file: {err}") from err
        filename = str(path)
    return parse_config(
        text,
        filename,
        overrides,
        environ if environ is not None else os.environ,
    )
