"""AVX-512 license accounting with an alternating High/Low all-core workload."""

from __future__ import annotations

from dataclasses import dataclass

from .analysis import summarize
from .core import LicensePhaseRecord, cycles_to_us
from .errors import ConfigError, EmptyInput
from .hwif.base import preserve_state

LICENSE2_KHZ = 2_700_000
OVERRUN_FACTOR = 1.5
DRIFT_TOLERANCE = 0.05


@dataclass(frozen=True)
class HighLowConfig:
    period_us: int = 2_000_000
    low_fraction_pct: int = 50
    duration_s: int = 300
    cpus: tuple[int, ...] = tuple(range(36))
    core_khz: int = 3_000_000
    memory: bool = False

    def __post_init__(self):
        if not 0 <= self.low_fraction_pct <= 100:
            raise ConfigError("low_fraction_pct must lie in 0..100")
        if self.period_us < 100:
            raise ConfigError("period_us must be >= 100")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be > 0")
        if not self.cpus:
            raise ConfigError("at least one CPU is required")

    @property
    def iterations(self) -> int:
        return int(self.duration_s * 1_000_000 // self.period_us)

    @property
    def phases_us(self) -> tuple[float, float]:
        low = self.period_us * self.low_fraction_pct / 100
        return self.period_us - low, low

    def to_dict(self):
        return {"period_us": self.period_us, "low_fraction_pct": self.low_fraction_pct,
                "duration_s": self.duration_s, "cpus": list(self.cpus), "core_khz": self.core_khz,
                "memory": self.memory}


_EVENTS = ("aperf", "throttle", "license2")


def run_high_low(config: HighLowConfig, hw, settle_us: float = 5000.0,
                 sink: dict | None = None) -> dict[int, list[LicensePhaseRecord]]:
    """
    One record per phase per CPU. Counters are read at every phase boundary;
    phase boundaries are a shared deadline busy-waited by all workers.
    """
    T = hw.tsc_khz
    high_us, low_us = config.phases_us
    records = sink if sink is not None else {}
    for c in config.cpus:
        records.setdefault(c, [])
    with preserve_state(hw):
        for c in config.cpus:
            hw.set_core_frequency(c, config.core_khz)
        hw.sleep_us(settle_us)
        last = {c: {e: hw.read_counter(c, e) for e in _EVENTS} for c in config.cpus}
        index = 0
        for _ in range(config.iterations):
            for kind, us, phase in (("High", high_us, "avx512_heavy"), ("Low", low_us, "serializing")):
                if us <= 0:
                    continue
                wall = hw.run_phase(config.cpus, phase, int(round(us * T / 1000)), memory=config.memory)
                nominal_ns = us * 1000
                for c in config.cpus:
                    now = {e: hw.read_counter(c, e) for e in _EVENTS}
                    d = {e: now[e] - last[c][e] for e in _EVENTS}
                    last[c] = now
                    total = max(0, d["aperf"])
                    # counters are read one after another; clamp the skew so the record stays consistent
                    records[c].append(LicensePhaseRecord(
                        kind=kind, cycles_total=total,
                        cycles_throttled=min(max(0, d["throttle"]), total),
                        cycles_license2=min(max(0, d["license2"]), total),
                        wall_ns=int(wall), cpu=c, index=index,
                        overrun=wall > OVERRUN_FACTOR * nominal_ns))
                index += 1
    return records


def _stats(values) -> dict:
    s = summarize(values)
    return {"n": s.n, "min": s.min, "median": s.p50, "max": s.max}


def summarize_license(records, throttle_khz: int, license_khz: int = LICENSE2_KHZ) -> dict:
    """
    Per-thread and aggregate min/median/max of the four license metrics.

    Throttle cycles tick at the core clock the phase was configured for
    (``throttle_khz``); license-2 cycles tick at ``license_khz``.
    """
    if isinstance(records, dict):
        flat = [r for rs in records.values() for r in rs]
    else:
        flat = list(records)
    if not flat:
        raise EmptyInput("no license records to summarize")
    per_cpu: dict[int, dict[str, list[float]]] = {}
    for r in flat:
        m = per_cpu.setdefault(r.cpu, {"throttle_us_per_transition": [], "low_license_us": [],
                                       "throttle_fraction_high": [], "license_fraction_low": []})
        frac = (lambda x: x / r.cycles_total if r.cycles_total else 0.0)
        if r.kind == "High":
            m["throttle_us_per_transition"].append(cycles_to_us(r.cycles_throttled, throttle_khz))
            m["throttle_fraction_high"].append(frac(r.cycles_throttled))
        else:
            m["low_license_us"].append(cycles_to_us(r.cycles_license2, license_khz))
            m["license_fraction_low"].append(frac(r.cycles_license2))
    metrics = ("throttle_us_per_transition", "low_license_us", "throttle_fraction_high",
               "license_fraction_low")
    out = {"aggregate": {}, "per_cpu": {}}
    for name in metrics:
        values = [v for m in per_cpu.values() for v in m[name]]
        out["aggregate"][name] = _stats(values) if values else None
    for cpu, m in sorted(per_cpu.items()):
        out["per_cpu"][cpu] = {name: (_stats(m[name]) if m[name] else None) for name in metrics}
    return out


def drift_flags(records, config: HighLowConfig) -> int:
    """Number of phases whose wall time is off nominal by more than 5 %."""
    high_us, low_us = config.phases_us
    nominal = {"High": high_us * 1000, "Low": low_us * 1000}
    seen = set()
    n = 0
    for rs in records.values():
        for r in rs:
            if r.index in seen:
                continue
            seen.add(r.index)
            if abs(r.wall_ns - nominal[r.kind]) > DRIFT_TOLERANCE * nominal[r.kind]:
                n += 1
    return n
