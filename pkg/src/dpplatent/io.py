"""Run configuration files and CSV matrices.

The configuration format is flat ``key = value`` lines with dotted
section keys, ``#`` comments and free key order::

    model = mixture
    data = "y.csv"
    schedule.iterations = 20000
    schedule.burn_in = 5000
    prior.delta = 1.0

Strings may be bare or double-quoted (JSON escapes); ``none`` clears an
optional field. Unknown keys are errors.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field

import numpy as np

from .featalloc import FeaturePriorConfig
from .mixture import MixturePriorConfig
from .trace import Schedule, atomic_write_text

__all__ = [
    "ConfigError",
    "DataFormatError",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "read_matrix_csv",
    "write_matrix_csv",
    "PRIOR_CLASSES",
]

PRIOR_CLASSES = {"mixture": MixturePriorConfig, "features": FeaturePriorConfig}
U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


class DataFormatError(ValueError):
    """Malformed CSV input."""


@dataclass(frozen=True)
class RunConfig:
    """A validated run: model, data, prior block, schedule, seed and chains."""

    model: str
    prior: MixturePriorConfig | FeaturePriorConfig
    schedule: Schedule
    data: str | None = None
    seed: int = 0
    chains: int = 1
    out: str | None = None
    extra: dict = field(default_factory=dict)  # simulate.* keys

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# key -> type for the top-level and schedule keys
_TOP = {"model": str, "data": str | None, "seed": int, "chains": int, "out": str | None}
_SCHEDULE = {"iterations": int, "burn_in": int, "thin": int}
_SIMULATE = {"n": int, "S": int, "K": int, "means": list, "sds": list, "weights": list, "sigma": float}


def _strip_comment(line):
    # '#' starts a comment unless inside a double-quoted string
    quoted, escaped = False, False
    for i, ch in enumerate(line):
        if escaped:
            escaped = False
        elif ch == "\\" and quoted:
            escaped = True
        elif ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _coerce(raw: str, kind):
    text = raw.strip()
    optional = isinstance(kind, types.UnionType) or typing.get_origin(kind) is typing.Union
    if optional:
        if text.lower() in ("none", "null"):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    if text.startswith('"'):
        value = json.loads(text)
        if kind is not str:
            raise ValueError(f"expected {kind.__name__}, got a string")
        return value
    if kind is str:
        if not text:
            raise ValueError("empty value")
        return text
    if kind is bool:
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return text.lower() == "true"
    if kind is int:
        return int(text)
    if kind is float:
        v = float(text)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {text!r}")
        return v
    if kind is list:
        return [_coerce(part, float) for part in text.split(",")]
    raise TypeError(kind)


def _prior_fields(model):
    cls = PRIOR_CLASSES[model]
    hints = typing.get_type_hints(cls)
    return cls, {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration file's text.

    Raises
    ------
    ConfigError
        With the line number for syntax errors and the key name for
        validation errors.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line).strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key or any(ch.isspace() for ch in key):
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first on line {raw[key][1]})")
        raw[key] = (value, lineno)

    def get(key, kind):
        value, lineno = raw[key]
        try:
            return _coerce(value, kind)
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None

    if "model" not in raw:
        raise ConfigError("missing required key 'model'")
    model = get("model", str)
    if model not in PRIOR_CLASSES:
        raise ConfigError(f"model: expected one of {sorted(PRIOR_CLASSES)}, got {model!r}")
    prior_cls, prior_kinds = _prior_fields(model)
    top, sched, prior, extra = {}, {}, {}, {}
    for key, (_, lineno) in raw.items():
        section, _, name = key.partition(".")
        if not name and key in _TOP:
            top[key] = get(key, _TOP[key])
        elif section == "schedule" and name in _SCHEDULE:
            sched[name] = get(key, _SCHEDULE[name])
        elif section == "prior" and name in prior_kinds:
            prior[name] = get(key, prior_kinds[name])
        elif section == "simulate" and name in _SIMULATE:
            extra[name] = get(key, _SIMULATE[name])
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if "iterations" not in sched:
        raise ConfigError("missing required key 'schedule.iterations'")
    try:
        schedule = Schedule(**sched)
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    try:
        prior_cfg = prior_cls(**prior)
    except ValueError as exc:
        raise ConfigError(f"prior: {exc}") from None
    seed = top.get("seed", 0)
    if not 0 <= seed <= U64_MAX:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {seed}")
    chains = top.get("chains", 1)
    if chains < 1:
        raise ConfigError(f"chains: must be >= 1, got {chains}")
    return RunConfig(model, prior_cfg, schedule, top.get("data"), seed, chains, top.get("out"), extra)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return ", ".join(repr(float(v)) for v in value)
    return repr(value)


def serialize_config(config: RunConfig) -> str:
    """Text that :func:`parse_config` maps back to an equal config."""
    lines = [f"model = {_format(config.model)}"]
    for key in ("data", "seed", "chains", "out"):
        lines.append(f"{key} = {_format(getattr(config, key))}")
    for key, value in config.schedule.as_dict().items():
        lines.append(f"schedule.{key} = {_format(value)}")
    for f in dataclasses.fields(config.prior):
        lines.append(f"prior.{f.name} = {_format(getattr(config.prior, f.name))}")
    for key, value in config.extra.items():
        lines.append(f"simulate.{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


# -- CSV ---------------------------------------------------------------------------


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_matrix_csv(path) -> np.ndarray:
    """Read a numeric CSV file into an ``(n, D)`` float matrix.

    A first line with any non-numeric cell is taken as a header.

    Raises
    ------
    DataFormatError
        Ragged rows, non-numeric or non-finite cells (1-based line and
        column in the message), or no data rows.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(rows[0][1])
    out = np.empty((len(rows), width))
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise DataFormatError(f"{path}: line {lineno} has {len(cells)} fields, expected {width}")
        for c, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}, column {c + 1}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise DataFormatError(f"{path}: line {lineno}, column {c + 1}: non-finite value {cell!r}")
            out[r, c] = v
    return out


def write_matrix_csv(path, matrix, header=None):
    """Write a 1-D or 2-D array as CSV (ints stay ints, floats keep full precision)."""
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr[:, None]
    lines = [",".join(header)] if header is not None else []
    for row in arr:
        lines.append(",".join(repr(v.item()) if isinstance(v, np.floating) else str(v.item()) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
