"""
C-state wake-up latency: a caller signals a blocked callee and both stamp
the TSC, once right before the signal and once on the callee's first
instruction after unblocking.

Kernel-side confirmation is possible with the sched:sched_wake_idle_without_ipi
and power:cpu_idle tracepoints; the measurement itself stays in userspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import summarize
from .core import cycles_to_us
from .errors import ConfigError, CStateUnavailable, InvalidCPU
from .hwif.base import preserve_state

CSTATES = ("C0poll", "C1", "C1E", "C6")
RELATIONS = ("local", "remote_active", "remote_idle")
DEFAULT_SWEEP_KHZ = (1_200_000, 1_800_000, 2_400_000, 3_000_000)

# the idle driver's name for each state
_DRIVER_NAME = {"C0poll": "POLL", "C1": "C1", "C1E": "C1E", "C6": "C6"}


@dataclass(frozen=True)
class WakeupSample:
    cstate: str
    relation: str
    core_khz: int
    latency_us: float
    flagged: bool = False
    usage_delta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cstate not in CSTATES:
            raise ValueError(f"unknown C-state {self.cstate!r}")
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if not self.latency_us > 0:
            raise ValueError("latency_us must be > 0")

    def to_dict(self):
        return {"cstate": self.cstate, "relation": self.relation, "core_khz": self.core_khz,
                "latency_us": self.latency_us, "flagged": self.flagged,
                "usage_delta": dict(sorted(self.usage_delta.items()))}


def choose_pair(hw, relation: str, cpus=None) -> tuple[int, int, list[int]]:
    """Pick (caller, callee, keep_busy) CPUs for a relation from the allowed set."""
    if relation not in RELATIONS:
        raise ConfigError(f"relation must be one of {RELATIONS}")
    allowed = hw.one_cpu_per_core(cpus)
    by_pkg: dict[int, list[int]] = {}
    for c in allowed:
        by_pkg.setdefault(hw.package_of(c), []).append(c)
    pkgs = sorted(by_pkg)
    if relation == "local":
        for p in pkgs:
            if len(by_pkg[p]) >= 2:
                return by_pkg[p][0], by_pkg[p][1], []
        raise InvalidCPU("local wake-up needs two cores of one package")
    if len(pkgs) < 2:
        raise InvalidCPU(f"{relation} wake-up needs CPUs on two packages")
    caller, callee = by_pkg[pkgs[0]][0], by_pkg[pkgs[1]][0]
    if relation == "remote_idle":
        return caller, callee, []
    others = [c for c in by_pkg[pkgs[1]] if c != callee]
    if not others:
        raise InvalidCPU("remote_active needs a second core on the callee's package to keep it awake")
    return caller, callee, others[:1]


def restrict_idle_states(hw, cpu, cstate: str) -> None:
    """Disable every idle state deeper than ``cstate`` on ``cpu``."""
    target = _DRIVER_NAME[cstate]
    names = hw.idle_states(cpu)
    if target not in names:
        raise CStateUnavailable(f"{cstate} is not offered by the idle driver of CPU {cpu}")
    depth = names.index(target)
    for i, name in enumerate(names):
        hw.set_idle_state_disabled(cpu, name, i > depth)


def measure_wakeup(hw, cstate: str, relation: str, core_khz: int, reps: int = 100,
                   sleep_s: float = 1.0, cpus=None, settle_us: float = 2000.0) -> list[WakeupSample]:
    if cstate not in CSTATES:
        raise CStateUnavailable(f"unknown C-state {cstate!r}")
    caller, callee, busy = choose_pair(hw, relation, cpus)
    T = hw.tsc_khz
    target = _DRIVER_NAME[cstate]
    with preserve_state(hw):
        for c in (caller, callee, *busy):
            hw.set_core_frequency(c, core_khz)
        restrict_idle_states(hw, callee, cstate)
        handle = hw.start_background(busy, "busy") if busy else None
        try:
            hw.sleep_us(settle_us)
            records = hw.wakeup_pair(caller, callee, reps, sleep_s)
        finally:
            if handle is not None:
                hw.stop_background(handle)
    out = []
    for r in records:
        entered = {k for k, v in r.usage_delta.items() if v}
        flagged = bool(entered) and entered != {target}
        lat = max(cycles_to_us(r.wake_cycles - r.signal_cycles, T), cycles_to_us(1, T))
        out.append(WakeupSample(cstate, relation, core_khz, lat, flagged, dict(r.usage_delta)))
    return out


def wakeup_baseline(hw, relation: str = "local", reps: int = 100, core_khz: int | None = None,
                    sleep_s: float = 1.0, cpus=None) -> float:
    """Median signal-delivery latency with the callee polling (no C-state exit)."""
    khz = core_khz or max(hw.selectable_frequencies())
    samples = measure_wakeup(hw, "C0poll", relation, khz, reps, sleep_s, cpus)
    return float(np.median([s.latency_us for s in samples]))


def sweep(hw, cstates=("C1", "C1E", "C6"), frequencies=DEFAULT_SWEEP_KHZ, relations=("local",),
          reps: int = 100, sleep_s: float = 1.0, cpus=None, sink: list | None = None) -> dict:
    """Every (relation, C-state, P-state) cell, plus a polling baseline per relation."""
    samples = sink if sink is not None else []
    baselines = {}
    for rel in relations:
        baselines[rel] = wakeup_baseline(hw, rel, reps, sleep_s=sleep_s, cpus=cpus)
        for cs in cstates:
            for khz in frequencies:
                samples.extend(measure_wakeup(hw, cs, rel, khz, reps, sleep_s, cpus))
    return {"samples": samples, "baseline_us": baselines}


def cell_stats(samples) -> dict:
    cells: dict[tuple, list[float]] = {}
    for s in samples:
        cells.setdefault((s.relation, s.cstate, s.core_khz), []).append(s.latency_us)
    return {k: summarize(v) for k, v in sorted(cells.items())}
