"""Posterior traces and their newline-delimited JSON persistence.

A trace file starts with one header record (model tag, schedule, seed,
config snapshot, metadata) followed by one record per retained sample.
Floats are written with ``repr`` precision, so a round trip is exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = ["PosteriorTrace", "Schedule", "TraceFormatError", "write_trace", "read_trace", "atomic_write_text", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

# field -> (dtype, ndim); scalars have ndim 0
FIELDS = {
    "mixture": {
        "K": (int, 0),
        "means": (float, 2),
        "weights": (float, 1),
        "precisions": (float, 2),
        "allocations": (int, 1),
        "theta": (float, 0),
        "sigma_q": (float, 0),
    },
    "features": {
        "K": (int, 0),
        "Z": (int, 2),
        "beta": (float, 2),
        "sigma2": (float, 0),
        "tau2": (float, 0),
    },
}


class TraceFormatError(ValueError):
    """Malformed or incompatible trace file."""


@dataclass
class PosteriorTrace:
    """Retained MCMC samples plus the information needed to reproduce them."""

    model: str
    samples: list = field(default_factory=list)
    schedule: dict = field(default_factory=dict)
    seed: int | None = None
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in FIELDS:
            raise ValueError(f"unknown model tag {self.model!r}")

    def __len__(self):
        return len(self.samples)

    def values(self, name):
        """One field across all samples, as a list."""
        return [s[name] for s in self.samples]

    def concat(self, other: "PosteriorTrace") -> "PosteriorTrace":
        if other.model != self.model:
            raise ValueError("cannot pool traces of different models")
        return PosteriorTrace(self.model, self.samples + other.samples, dict(self.schedule), self.seed,
                              dict(self.config), dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, PosteriorTrace):
            return NotImplemented
        if (self.model, self.schedule, self.seed, self.config, self.meta) != (
            other.model, other.schedule, other.seed, other.config, other.meta
        ) or len(self) != len(other):
            return False
        for a, b in zip(self.samples, other.samples):
            if a.keys() != b.keys():
                return False
            for k in a:
                va, vb = np.asarray(a[k]), np.asarray(b[k])
                if va.shape != vb.shape or not np.array_equal(va, vb):
                    return False
        return True


def _encode(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def _decode(model, name, value, meta):
    dtype, ndim = FIELDS[model].get(name, (None, None))
    if dtype is None:
        return value
    if ndim == 0:
        return dtype(value)
    arr = np.array(value, dtype=dtype)
    if arr.ndim != ndim:
        if arr.size:
            raise TraceFormatError(f"field {name!r} has {arr.ndim} dimensions, expected {ndim}")
        # empty arrays lose their trailing shape in JSON
        trailing = {"beta": meta.get("S", 0), "means": meta.get("D", 0), "precisions": meta.get("D", 0)}
        arr = arr.reshape((0, trailing.get(name, 0))[:ndim])
    return arr


def atomic_write_text(path, text: str):
    """Write via a temporary file and rename, so failures leave nothing partial."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(path, trace: PosteriorTrace):
    header = {
        "record": "header",
        "schema": SCHEMA_VERSION,
        "model": trace.model,
        "schedule": trace.schedule,
        "seed": trace.seed,
        "config": trace.config,
        "meta": trace.meta,
        "n_samples": len(trace),
    }
    lines = [json.dumps(header, allow_nan=False)]
    for i, s in enumerate(trace.samples):
        rec = {"record": "sample", "index": i}
        rec.update({k: _encode(v) for k, v in s.items()})
        lines.append(json.dumps(rec, allow_nan=False))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trace(path) -> PosteriorTrace:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: empty trace file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}:1: corrupted header ({exc.msg})") from None
    if header.get("record") != "header":
        raise TraceFormatError(f"{path}:1: first record is not a header")
    if header.get("schema") != SCHEMA_VERSION:
        raise TraceFormatError(f"{path}: schema version {header.get('schema')!r}, expected {SCHEMA_VERSION}")
    model, meta = header["model"], header.get("meta", {})
    if model not in FIELDS:
        raise TraceFormatError(f"{path}:1: unknown model {model!r}")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}:{lineno}: corrupted record ({exc.msg})") from None
        if not isinstance(rec, dict) or rec.get("record") != "sample":
            raise TraceFormatError(f"{path}:{lineno}: not a sample record")
        missing = set(FIELDS[model]) - set(rec)
        if missing:
            raise TraceFormatError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        samples.append({k: _decode(model, k, v, meta) for k, v in rec.items() if k not in ("record", "index")})
    if header.get("n_samples", len(samples)) != len(samples):
        raise TraceFormatError(f"{path}: header announces {header['n_samples']} samples, found {len(samples)}")
    return PosteriorTrace(model, samples, header.get("schedule", {}), header.get("seed"),
                          header.get("config", {}), meta)


@dataclass(frozen=True)
class Schedule:
    """Iterations, burn-in and thinning of a chain."""

    iterations: int
    burn_in: int = 0
    thin: int = 1

    def __post_init__(self):
        for name in ("iterations", "burn_in", "thin"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"{name} must be an integer")
            object.__setattr__(self, name, int(v))
        if self.iterations < 1 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("need iterations >= 1, burn_in >= 0, thin >= 1")
        if self.burn_in >= self.iterations:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than iterations ({self.iterations})")

    def keep(self, it: int) -> bool:
        """Whether (0-based) iteration ``it`` is retained.

        The last iteration of each full thinning block is kept, giving
        ``(iterations - burn_in) // thin`` samples.
        """
        return it >= self.burn_in and (it - self.burn_in + 1) % self.thin == 0

    @property
    def n_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def as_dict(self):
        return {"iterations": self.iterations, "burn_in": self.burn_in, "thin": self.thin}
