"""
Shared value objects.

Every experiment produces and consumes these types. They validate their
invariants on construction and serialize to a canonical JSON form; all
durations are kept in TSC cycles together with the ``tsc_khz`` needed to
convert them, microsecond values are derived on demand.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1

DOMAINS = ("core", "uncore")
POWER_SOURCES = ("rapl", "external_file", "simulated")
PHASE_KINDS = ("High", "Low")
BACKEND_KINDS = ("hardware", "simulation")

# Selectable ranges of the reference platform (Xeon Gold 6154).
REFERENCE_RANGE_KHZ = {
    "core": (1_200_000, 3_000_000),
    "uncore": (1_200_000, 2_400_000),
}

DEFAULT_TOLERANCE = 0.10


def cycles_to_us(cycles: float, tsc_khz: int) -> float:
    return cycles * 1000.0 / tsc_khz


def us_to_cycles(us: float, tsc_khz: int) -> float:
    return us * tsc_khz / 1000.0


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and value objects to JSON types."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass(frozen=True)
class FrequencyLevel:
    khz: int
    domain: str = "core"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown frequency domain {self.domain!r}")
        if int(self.khz) != self.khz or self.khz <= 0:
            raise ValueError(f"frequency must be a positive integer kHz, got {self.khz}")

    @classmethod
    def within(cls, khz: int, domain: str, lo: int, hi: int) -> "FrequencyLevel":
        level = cls(khz, domain)
        if not lo <= khz <= hi:
            raise ValueError(f"{khz} kHz outside selectable {domain} range [{lo}, {hi}]")
        return level

    @property
    def ghz(self) -> float:
        return self.khz / 1e6

    def to_dict(self):
        return {"khz": self.khz, "domain": self.domain}


def _trace_problems(timestamps: np.ndarray, durations: np.ndarray, tsc_khz) -> list[str]:
    problems = []
    if tsc_khz is None or tsc_khz <= 0:
        problems.append("tsc_khz must be > 0")
    if len(timestamps) != len(durations):
        problems.append("timestamp/duration length mismatch")
        return problems
    if len(durations) and durations.min() <= 0:
        problems.append("duration_cycles must be > 0")
    if len(timestamps) > 1 and np.any(np.diff(timestamps) <= 0):
        problems.append("timestamps must be strictly increasing")
    return problems


class LatencyTrace:
    """
    Ordered per-access ``(timestamp_cycles, duration_cycles)`` records.

    The timestamp is taken right after the access completes, so the access
    started at ``timestamp - duration``.
    """

    __slots__ = ("timestamps", "durations", "tsc_khz")

    def __init__(self, timestamps, durations, tsc_khz: int):
        ts = np.array(timestamps, dtype=np.int64).reshape(-1)
        du = np.array(durations, dtype=np.int64).reshape(-1)
        problems = _trace_problems(ts, du, tsc_khz)
        if problems:
            raise ValueError("invalid LatencyTrace: " + "; ".join(problems))
        ts.flags.writeable = False
        du.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "durations", du)
        object.__setattr__(self, "tsc_khz", int(tsc_khz))

    def __setattr__(self, name, value):
        raise AttributeError("LatencyTrace is immutable")

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int]], tsc_khz: int) -> "LatencyTrace":
        entries = list(entries)
        ts = [e[0] for e in entries]
        du = [e[1] for e in entries]
        return cls(ts, du, tsc_khz)

    @classmethod
    def concat(cls, traces: Sequence["LatencyTrace"]) -> "LatencyTrace":
        if not traces:
            raise ValueError("nothing to concatenate")
        return cls(np.concatenate([t.timestamps for t in traces]),
                   np.concatenate([t.durations for t in traces]),
                   traces[0].tsc_khz)

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.timestamps.tolist(), self.durations.tolist()))

    @property
    def starts(self) -> np.ndarray:
        return self.timestamps - self.durations

    def __len__(self):
        return len(self.durations)

    def __eq__(self, other):
        if not isinstance(other, LatencyTrace):
            return NotImplemented
        return (self.tsc_khz == other.tsc_khz
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.durations, other.durations))

    __hash__ = None

    def __repr__(self):
        return f"LatencyTrace(n={len(self)}, tsc_khz={self.tsc_khz})"

    def to_dict(self):
        return {"entries": [[int(t), int(d)] for t, d in self.entries], "tsc_khz": self.tsc_khz}

    @classmethod
    def from_dict(cls, d):
        return cls.from_entries(d["entries"], d["tsc_khz"])


def validate_trace(trace, tsc_khz: int | None = None) -> bool:
    """
    True iff the trace invariants hold.

    Accepts a `LatencyTrace` or a raw sequence of ``(timestamp, duration)``
    pairs; for raw entries a missing ``tsc_khz`` is not held against them.
    """
    if isinstance(trace, LatencyTrace):
        ts, du, khz = trace.timestamps, trace.durations, trace.tsc_khz
    else:
        entries = list(trace)
        if any(len(e) != 2 for e in entries):
            return False
        ts = np.array([e[0] for e in entries], dtype=np.int64)
        du = np.array([e[1] for e in entries], dtype=np.int64)
        khz = 1 if tsc_khz is None else tsc_khz
    return not _trace_problems(ts, du, khz)


@dataclass(frozen=True)
class TransitionMeasurement:
    """One frequency switch seen by a latency probe."""

    t_delay_cycles: int
    t_gap_cycles: int
    latency_before_cycles: float
    latency_after_cycles: float
    tsc_khz: int
    valid: bool = True

    def __post_init__(self):
        if self.t_delay_cycles < 0 or self.t_gap_cycles < 0:
            raise ValueError("t_delay and t_gap must be >= 0")
        if self.tsc_khz <= 0:
            raise ValueError("tsc_khz must be > 0")

    @property
    def t_delay_us(self) -> float:
        return cycles_to_us(self.t_delay_cycles, self.tsc_khz)

    @property
    def t_gap_us(self) -> float:
        return cycles_to_us(self.t_gap_cycles, self.tsc_khz)

    def with_validity(self, valid: bool) -> "TransitionMeasurement":
        return TransitionMeasurement(self.t_delay_cycles, self.t_gap_cycles,
                                     self.latency_before_cycles, self.latency_after_cycles,
                                     self.tsc_khz, bool(valid))

    def to_dict(self):
        return {
            "t_delay_us": self.t_delay_us,
            "t_gap_us": self.t_gap_us,
            "t_delay_cycles": int(self.t_delay_cycles),
            "t_gap_cycles": int(self.t_gap_cycles),
            "latency_before_cycles": float(self.latency_before_cycles),
            "latency_after_cycles": float(self.latency_after_cycles),
            "tsc_khz": self.tsc_khz,
            "valid": bool(self.valid),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["t_delay_cycles"], d["t_gap_cycles"], d["latency_before_cycles"],
                   d["latency_after_cycles"], d["tsc_khz"], d["valid"])


@dataclass(frozen=True)
class Histogram:
    origin: float
    bin_width: float
    counts: tuple[int, ...]
    n: int
    overflow: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        if sum(self.counts) != self.n:
            raise ValueError(f"sum(counts)={sum(self.counts)} != n={self.n}")

    @property
    def centers(self) -> list[float]:
        return [self.origin + (i + 0.5) * self.bin_width for i in range(len(self.counts))]

    def to_dict(self):
        return {"origin": self.origin, "bin_width": self.bin_width,
                "counts": list(self.counts), "n": self.n, "overflow": self.overflow}

    @classmethod
    def from_dict(cls, d):
        return cls(d["origin"], d["bin_width"], tuple(d["counts"]), d["n"], d.get("overflow", 0))


@dataclass(frozen=True)
class PowerSample:
    t_ns: int
    watts: float
    source: str = "simulated"

    def __post_init__(self):
        if self.source not in POWER_SOURCES:
            raise ValueError(f"unknown power source {self.source!r}")
        if not (self.watts >= 0) or math.isinf(self.watts):
            raise ValueError(f"watts must be finite and >= 0, got {self.watts}")

    def to_dict(self):
        return {"t_ns": int(self.t_ns), "watts": float(self.watts), "source": self.source}

    @classmethod
    def from_dict(cls, d):
        return cls(d["t_ns"], d["watts"], d["source"])


def check_single_source(samples: Sequence[PowerSample]) -> None:
    sources = {s.source for s in samples}
    if len(sources) > 1:
        raise ValueError(f"power samples mix sources: {sorted(sources)}")


@dataclass(frozen=True)
class LicensePhaseRecord:
    kind: str
    cycles_total: int
    cycles_throttled: int
    cycles_license2: int
    wall_ns: int
    cpu: int = 0
    index: int = 0
    overrun: bool = False

    def __post_init__(self):
        if self.kind not in PHASE_KINDS:
            raise ValueError(f"phase kind must be High or Low, got {self.kind!r}")
        if not 0 <= self.cycles_throttled <= self.cycles_total:
            raise ValueError("cycles_throttled must lie in [0, cycles_total]")
        if not 0 <= self.cycles_license2 <= self.cycles_total:
            raise ValueError("cycles_license2 must lie in [0, cycles_total]")
        if self.wall_ns < 0:
            raise ValueError("wall_ns must be >= 0")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class RegressionFit:
    """Linear model ``y = intercept + sum(coef[k] * x_k)``."""

    intercept_w: float
    coef: dict[str, float]
    rss: float
    n: int

    def __post_init__(self):
        if self.n < len(self.coef) + 1:
            raise ValueError("n must be at least the number of predictors + 1")
        if self.rss < 0:
            raise ValueError("rss must be >= 0")

    def to_dict(self):
        return {"intercept_w": self.intercept_w, "coef": dict(self.coef),
                "rss": self.rss, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        return cls(d["intercept_w"], dict(d["coef"]), d["rss"], d["n"])


@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    backend: str
    config: dict[str, Any]
    topology: list[int]
    results: dict[str, Any]
    seed: int
    truncated: bool = False
    schema: int = field(default=SCHEMA_VERSION)

    def __post_init__(self):
        if self.backend not in BACKEND_KINDS:
            raise ValueError(f"backend must be one of {BACKEND_KINDS}")

    @property
    def config_hash(self) -> str:
        blob = json.dumps(to_jsonable(self.config), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self):
        return {
            "schema": self.schema,
            "experiment": self.experiment,
            "backend": self.backend,
            "config": to_jsonable(self.config),
            "config_hash": self.config_hash,
            "topology": list(self.topology),
            "results": to_jsonable(self.results),
            "seed": self.seed,
            "truncated": self.truncated,
        }

    def to_json(self) -> str:
        return canonical_json(self)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')}")
        return cls(d["experiment"], d["backend"], d["config"], list(d["topology"]),
                   d["results"], d["seed"], d.get("truncated", False))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))
