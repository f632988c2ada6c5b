"""The interface every backend implements, plus helpers shared by both."""

from __future__ import annotations

import abc
import contextlib
import threading
from dataclasses import dataclass, field

from ..core import LatencyTrace, PowerSample
from ..errors import InvalidCPU, RangeViolation
from . import registers as regs


@dataclass(frozen=True)
class CpuInfo:
    cpu: int
    core: int
    package: int


@dataclass(frozen=True)
class WakeRecord:
    """One caller→callee wake-up: both timestamps in the shared TSC domain."""

    signal_cycles: int
    wake_cycles: int
    usage_delta: dict = field(default_factory=dict)


class Backend(abc.ABC):
    """
    Timing, frequency control, MSRs, counters, power and workload primitives.

    Workload primitives (`timed_chase`, `timed_compute`, `run_phase`, ...)
    live here rather than in the experiment modules because the simulation
    has to model their timing instead of executing them.
    """

    kind: str = "abstract"
    tsc_khz: int

    def __init__(self, config):
        self.config = config
        self._msr_lock = threading.Lock()
        self._power_lock = threading.Lock()

    # topology -----------------------------------------------------------

    @abc.abstractmethod
    def topology(self) -> list[CpuInfo]:
        ...

    def cpus(self) -> list[int]:
        return [c.cpu for c in self.topology()]

    def _info(self, cpu) -> CpuInfo:
        for c in self.topology():
            if c.cpu == cpu:
                return c
        raise InvalidCPU(f"CPU {cpu} is not part of the topology")

    def check_cpu(self, cpu) -> int:
        return self._info(cpu).cpu

    def package_of(self, cpu) -> int:
        return self._info(cpu).package

    def core_of(self, cpu) -> tuple[int, int]:
        info = self._info(cpu)
        return info.package, info.core

    def packages(self) -> list[int]:
        return sorted({c.package for c in self.topology()})

    def first_cpu_of(self, package) -> int:
        return min(c.cpu for c in self.topology() if c.package == package)

    def one_cpu_per_core(self, cpus=None) -> list[int]:
        seen, out = set(), []
        for c in sorted(self.topology(), key=lambda c: c.cpu):
            if cpus is not None and c.cpu not in cpus:
                continue
            if (c.package, c.core) not in seen:
                seen.add((c.package, c.core))
                out.append(c.cpu)
        return out

    # time ---------------------------------------------------------------

    @abc.abstractmethod
    def now_cycles(self, cpu=None) -> int:
        ...

    @abc.abstractmethod
    def sleep_us(self, us: float) -> None:
        ...

    def timer_overhead_cycles(self) -> int:
        samples = []
        for _ in range(64):
            a = self.now_cycles()
            b = self.now_cycles()
            samples.append(b - a)
        samples.sort()
        return int(samples[len(samples) // 2])

    # registers ----------------------------------------------------------

    def read_msr(self, cpu: int, address: int) -> int:
        self.check_cpu(cpu)
        with self._msr_lock:
            return self._read_msr(cpu, address)

    def write_msr(self, cpu: int, address: int, value: int) -> None:
        self.check_cpu(cpu)
        if not 0 <= value < 2**64:
            raise RangeViolation("MSR values are 64-bit unsigned")
        with self._msr_lock:
            self._write_msr(cpu, address, value)

    @abc.abstractmethod
    def _read_msr(self, cpu, address) -> int:
        ...

    @abc.abstractmethod
    def _write_msr(self, cpu, address, value) -> None:
        ...

    @abc.abstractmethod
    def uncore_ratio_limits(self) -> tuple[int, int]:
        ...

    def set_uncore_range(self, min_ratio: int, max_ratio: int, packages=None) -> None:
        """
        Restrict the uncore to ``[min_ratio, max_ratio]`` x 100 MHz.

        Equal bounds request a pinned frequency; the processor may still
        clock the uncore down when it runs into its power limit.
        """
        lo, hi = self.uncore_ratio_limits()
        if not lo <= min_ratio <= max_ratio <= hi:
            raise RangeViolation(
                f"uncore ratios must satisfy {lo} <= min <= max <= {hi}, got ({min_ratio}, {max_ratio})")
        value = regs.encode_uncore_ratio_limit(min_ratio, max_ratio)
        for pkg in (self.packages() if packages is None else packages):
            self.write_msr(self.first_cpu_of(pkg), regs.MSR_UNCORE_RATIO_LIMIT, value)

    def uncore_range(self, package: int = 0) -> tuple[int, int]:
        raw = self.read_msr(self.first_cpu_of(package), regs.MSR_UNCORE_RATIO_LIMIT)
        return regs.decode_uncore_ratio_limit(raw)

    def set_clock_modulation(self, cpu: int, level: int) -> None:
        self.write_msr(cpu, regs.IA32_CLOCK_MODULATION, regs.encode_clock_modulation(level))

    def clock_modulation(self, cpu: int) -> int:
        return regs.decode_clock_modulation(self.read_msr(cpu, regs.IA32_CLOCK_MODULATION))

    # frequency ----------------------------------------------------------

    @abc.abstractmethod
    def selectable_frequencies(self, cpu: int = 0) -> list[int]:
        ...

    @abc.abstractmethod
    def governor(self, cpu: int) -> str:
        ...

    @abc.abstractmethod
    def set_core_frequency(self, cpu: int, khz: int) -> None:
        ...

    # counters and power -------------------------------------------------

    @abc.abstractmethod
    def read_counter(self, cpu: int, event: str) -> int:
        ...

    @abc.abstractmethod
    def sample_power(self) -> PowerSample:
        ...

    # placement ----------------------------------------------------------

    @abc.abstractmethod
    def pin_to_cpu(self, cpu: int) -> None:
        ...

    @abc.abstractmethod
    def current_cpu(self) -> int:
        ...

    # workloads ----------------------------------------------------------

    @abc.abstractmethod
    def timed_chase(self, cpu: int, buffer, num_accesses: int) -> LatencyTrace:
        ...

    @abc.abstractmethod
    def spin_chase(self, cpu: int, buffer, num_accesses: int) -> None:
        ...

    @abc.abstractmethod
    def timed_compute(self, cpu: int, core_cycles_per_iter: int, n: int) -> LatencyTrace:
        ...

    @abc.abstractmethod
    def count_work(self, cpu: int, duration_s: float) -> int:
        ...

    @abc.abstractmethod
    def run_phase(self, cpus, kind: str, duration_cycles: int, memory: bool = False) -> int:
        """Run one workload phase on all ``cpus``; returns the phase wall time in ns."""

    @abc.abstractmethod
    def start_background(self, cpus, kind: str, **params):
        ...

    @abc.abstractmethod
    def stop_background(self, handle) -> None:
        ...

    @abc.abstractmethod
    def wakeup_pair(self, caller: int, callee: int, reps: int, sleep_s: float = 1.0) -> list[WakeRecord]:
        ...

    # idle states --------------------------------------------------------

    @abc.abstractmethod
    def idle_states(self, cpu: int) -> list[str]:
        ...

    @abc.abstractmethod
    def idle_state_disabled(self, cpu: int, name: str) -> bool:
        ...

    @abc.abstractmethod
    def set_idle_state_disabled(self, cpu: int, name: str, disabled: bool) -> None:
        ...

    @abc.abstractmethod
    def idle_usage(self, cpu: int) -> dict[str, int]:
        ...

    # state hygiene ------------------------------------------------------

    @abc.abstractmethod
    def save_knobs(self) -> dict:
        ...

    @abc.abstractmethod
    def restore_knobs(self, saved: dict) -> None:
        ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@contextlib.contextmanager
def preserve_state(hw: Backend):
    """Restore every frequency/uncore/idle/modulation knob on exit, error or not."""
    saved = hw.save_knobs()
    try:
        yield saved
    finally:
        hw.restore_knobs(saved)
