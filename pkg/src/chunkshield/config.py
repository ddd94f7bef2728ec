"""Pipeline configuration and its key-value file format.

A config file holds one ``key = value`` pair per line. Blank lines and text
after ``#`` are ignored. Keys are the :class:`PipelineConfig` field names;
``k_attrs`` accepts ``all``. Example::

    # defaults
    kernel = 50
    stride = 25
    trees = 100
    outlier_fraction = 0.01
    info = 0.875
    bins = 32
    k_attrs = all
    seed = 0
    batch_size = 4
    workers = 1
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import ConfigError

SAMPLE_FRACTION = 0.3


@dataclass(frozen=True)
class PipelineConfig:
    kernel: int = 50
    stride: int = 25
    trees: int = 100
    outlier_fraction: float = 0.01
    info: float = 0.875
    bins: int = 32
    k_attrs: int | None = None
    seed: int = 0
    batch_size: int = 4
    workers: int = 1
    passthrough_degenerate: bool = True

    def __post_init__(self) -> None:
        if self.kernel < 1:
            raise ConfigError(f"kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.trees < 1:
            raise ConfigError(f"trees must be >= 1, got {self.trees}")
        if not 0.0 < self.outlier_fraction < 1.0:
            raise ConfigError(f"outlier_fraction must be in (0, 1), got {self.outlier_fraction}")
        if not 0.0 < self.info <= 1.0:
            raise ConfigError(f"info must be in (0, 1], got {self.info}")
        if not 2 <= self.bins <= 256:
            raise ConfigError(f"bins must be in [2, 256], got {self.bins}")
        if self.k_attrs is not None and self.k_attrs < 1:
            raise ConfigError(f"k_attrs must be >= 1 or 'all', got {self.k_attrs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    @property
    def sample_fraction(self) -> float:
        return SAMPLE_FRACTION

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'all' if v is None else str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw: Any) -> Any:
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key == "k_attrs":
            return None if text.lower() in ("all", "none", "") else int(text)
        if "bool" in str(kind):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "float" in str(kind):
            return float(text)
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        values[key] = _coerce(key, raw)
    return values


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (``None`` values skipped)."""
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _coerce(key, raw)
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
