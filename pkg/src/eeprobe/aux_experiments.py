"""T-state duty-cycle and PPERF productivity checks."""

from __future__ import annotations

from dataclasses import dataclass

from .chase import build_preset
from .errors import ConfigError, VerificationFailure
from .hwif.base import preserve_state
from .hwif.registers import CLOCK_MOD_LEVELS, nominal_duty

# a level whose work loss is below half a duty step did not modulate
_INEFFECTIVE_MARGIN = 0.5 / CLOCK_MOD_LEVELS


@dataclass(frozen=True)
class TstateResult:
    level: int
    nominal_duty: float
    effective_duty: float

    def __post_init__(self):
        if not 0 < self.effective_duty <= 1:
            raise ValueError(f"effective_duty must lie in (0, 1], got {self.effective_duty}")

    @property
    def implemented(self) -> bool:
        return self.level == 0 or self.effective_duty < 1.0 - _INEFFECTIVE_MARGIN

    def to_dict(self):
        return {"level": self.level, "nominal_duty": self.nominal_duty,
                "effective_duty": self.effective_duty, "implemented": self.implemented}


def measure_tstate(level: int, duration_s: float, hw, cpu: int = 0,
                   core_khz: int | None = None) -> TstateResult:
    """
    Work done under clock modulation ``level`` relative to the same time
    unmodulated, with the core frequency pinned so DVFS cannot interfere.
    """
    with preserve_state(hw):
        hw.pin_to_cpu(cpu)
        hw.set_core_frequency(cpu, core_khz or max(hw.selectable_frequencies(cpu)))
        hw.sleep_us(2000)
        hw.set_clock_modulation(cpu, 0)
        reference = hw.count_work(cpu, duration_s)
        hw.set_clock_modulation(cpu, level)
        modulated = hw.count_work(cpu, duration_s)
    if reference <= 0 or modulated <= 0:
        raise VerificationFailure("the work kernel made no progress")
    return TstateResult(level, nominal_duty(level), min(1.0, modulated / reference))


def measure_tstate_sweep(hw, levels=range(1, CLOCK_MOD_LEVELS), duration_s: float = 1.0, cpu: int = 0,
                         core_khz: int | None = None, sink: list | None = None) -> list[TstateResult]:
    out = sink if sink is not None else []
    for level in levels:
        out.append(measure_tstate(level, duration_s, hw, cpu, core_khz))
    return out


def is_monotone(results) -> bool:
    """Effective duty never rises as modulation deepens (implemented levels only)."""
    eff = [r.effective_duty for r in sorted(results, key=lambda r: -r.level) if r.implemented]
    return all(a >= b for a, b in zip(eff, eff[1:]))


def measure_pperf_ratio(workload: str, duration_s: float, hw, cpu: int = 0, seed: int = 0,
                        chunk: int = 65_536) -> float:
    """PPERF delta over APERF delta while a stalling chase or a compute loop runs."""
    if workload not in ("stall_chase", "compute"):
        raise ConfigError(f"workload must be stall_chase or compute, got {workload!r}")
    with preserve_state(hw):
        hw.pin_to_cpu(cpu)
        buf = build_preset("dram", seed) if workload == "stall_chase" else None
        if buf is not None:
            hw.spin_chase(cpu, buf, buf.num_lines)
        p0, a0 = hw.read_counter(cpu, "pperf"), hw.read_counter(cpu, "aperf")
        if buf is None:
            hw.count_work(cpu, duration_s)
        else:
            end = hw.now_cycles() + duration_s * hw.tsc_khz * 1000
            while hw.now_cycles() < end:
                hw.spin_chase(cpu, buf, chunk)
        p1, a1 = hw.read_counter(cpu, "pperf"), hw.read_counter(cpu, "aperf")
    if a1 <= a0:
        raise VerificationFailure("APERF did not advance")
    return (p1 - p0) / (a1 - a0)
