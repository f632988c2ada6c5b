"""Backend configuration and the simulation's behavioural parameters."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any

from ..errors import ConfigError

KIB = 1024
MIB = 1024 * KIB


@dataclass(frozen=True)
class SimParameters:
    """
    Behaviour of the simulated Xeon Gold 6154 system.

    Defaults reproduce the measured behaviour of the reference platform;
    every field can be overridden. Range-valued fields are ``(low, high)``
    and are sampled uniformly with the run seed.
    """

    # platform
    tsc_khz: int = 3_000_000
    packages: int = 2
    cores_per_package: int = 18
    threads_per_core: int = 2
    core_khz_min: int = 1_200_000
    core_khz_max: int = 3_000_000
    core_khz_step: int = 100_000
    nominal_core_khz: int = 3_000_000
    uncore_ratio_min: int = 12
    uncore_ratio_max: int = 24
    timer_overhead_cycles: int = 25

    # core P-states
    pstate_update_interval_us: float = 500.0

    # uncore frequency scaling
    ufs_update_interval_us: float = 1500.0
    ufs_controlloop_ms: float = 9.8
    ufs_gap_us_range: tuple[float, float] = (14.5, 16.0)
    ufs_artifact_fraction: float = 0.2
    ufs_artifact_gap_us_range: tuple[float, float] = (7.0, 8.0)
    ufs_llc_cycles_low: float = 119.0
    ufs_llc_cycles_high: float = 83.0
    ufs_llc_ref_low_khz: int = 1_400_000
    ufs_llc_ref_high_khz: int = 2_400_000
    ufs_llc_ref_core_khz: int = 2_400_000
    ufs_loop_low_khz: int = 1_400_000
    ufs_loop_high_khz: int = 2_400_000

    # memory hierarchy
    l1_bytes: int = 32 * KIB
    l2_bytes: int = 1 * MIB
    llc_bytes: int = 18 * 1408 * KIB
    l1_latency_core_cycles: float = 5.0
    l2_latency_core_cycles: float = 14.0
    dram_extra_ns: float = 80.0

    # C-states
    wake_signal_us: float = 1.0
    wake_jitter_us: float = 0.2
    c1_wake_us: float = 2.0
    c1e_wake_us: float = 9.0
    c6_wake_us_nominal: float = 33.0
    c6_wake_us_minfreq: float = 42.0
    c6_wake_us_remote_idle_range: tuple[float, float] = (46.0, 48.0)
    c6_remote_idle_tail_us_range: tuple[float, float] = (54.5, 55.5)
    c6_remote_idle_tail_prob: float = 0.05
    cstate_demotion_prob: float = 0.0

    # T-states
    tstate_unimplemented_levels: tuple[int, ...] = (1,)
    tstate_excess_skip: float = 0.03

    # AVX licenses
    license2_khz: int = 2_700_000
    avx_throttle_us_range: tuple[float, float] = (62.0, 75.0)
    avx_throttle_jitter_us: float = 1.5
    avx_license_residency_us_range: tuple[float, float] = (555.0, 704.0)
    avx_license_ramp_us: float = 4000.0

    # power
    power_coef_v1_mw: dict = field(default_factory=lambda: {2_400_000: 1.69, 3_000_000: 3.13})
    power_coef_v2_mw: dict = field(default_factory=lambda: {2_400_000: 0.46, 3_000_000: 0.80})
    power_base_w: dict = field(default_factory=lambda: {2_400_000: 310.0, 3_000_000: 362.0})
    power_idle_w: float = 78.0
    power_busy_w_per_cpu: float = 3.0
    power_noise_w: float = 0.5
    power_tau_s: float = 0.1
    rapl_limit_short_w: float = 240.0
    rapl_limit_long_w: float = 200.0
    uncore_clamp_w_per_ratio: float = 5.0

    # performance counters
    pperf_counts_stalled_cycles: bool = True
    stall_productive_fraction: float = 0.1
    work_cycles_per_iteration: int = 100

    def __post_init__(self):
        for name in ("pstate_update_interval_us", "ufs_update_interval_us", "tsc_khz",
                     "work_cycles_per_iteration"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.power_tau_s < 0:
            raise ConfigError("power_tau_s must be >= 0 (0 settles instantly)")
        if self.ufs_controlloop_ms < 0:
            raise ConfigError("ufs_controlloop_ms must be >= 0")
        for f in dataclasses.fields(self):
            if f.name.endswith("_range"):
                lo, hi = getattr(self, f.name)
                if lo > hi:
                    raise ConfigError(f"{f.name}: lower bound {lo} > upper bound {hi}")
        for name in ("ufs_artifact_fraction", "c6_remote_idle_tail_prob", "cstate_demotion_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")

    @property
    def num_cpus(self) -> int:
        return self.packages * self.cores_per_package * self.threads_per_core

    def override(self, **kw) -> "SimParameters":
        names = {f.name for f in dataclasses.fields(self)}
        unknown = set(kw) - names
        if unknown:
            raise ConfigError(f"unknown simulation parameter(s): {sorted(unknown)}")
        fixed = {}
        for k, v in kw.items():
            if k.endswith("_range") or k == "tstate_unimplemented_levels":
                if isinstance(v, str):
                    v = [x for x in v.split(",") if x.strip()]
                try:
                    v = tuple(float(x) if k.endswith("_range") else int(x) for x in v)
                except (TypeError, ValueError):
                    raise ConfigError(f"{k}: expected a list of numbers, got {v!r}") from None
            elif k.startswith("power_") and isinstance(v, dict):
                v = {int(kk): float(vv) for kk, vv in v.items()}
            fixed[k] = v
        try:
            return dataclasses.replace(self, **fixed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid simulation parameter: {exc}") from exc

    def override_from_strings(self, items) -> "SimParameters":
        """Apply ``key=value`` overrides where value is JSON (bare strings allowed)."""
        kw = {}
        for item in items:
            if "=" not in item:
                raise ConfigError(f"expected key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                kw[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                kw[key.strip()] = raw
        return self.override(**kw)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, dict):
                d[k] = {str(kk): vv for kk, vv in v.items()}
        return d


POWER_SOURCE_KINDS = ("rapl", "external_file", "simulated")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "simulation"
    msr_path_template: str = "/dev/cpu/{cpu}/msr"
    cpufreq_path_template: str = "/sys/devices/system/cpu/cpu{cpu}/cpufreq"
    cpuidle_path_template: str = "/sys/devices/system/cpu/cpu{cpu}/cpuidle"
    topology_path_template: str = "/sys/devices/system/cpu/cpu{cpu}/topology"
    rapl_path_template: str = "/sys/class/powercap/intel-rapl:{package}"
    power_source: str = "simulated"
    power_path: str | None = None
    sim: SimParameters = field(default_factory=SimParameters)
    seed: int = 0
    cpus: tuple[int, ...] | None = None
    tsc_khz: int | None = None

    def __post_init__(self):
        kind = {"sim": "simulation", "hw": "hardware"}.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in ("hardware", "simulation"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.power_source not in POWER_SOURCE_KINDS:
            raise ConfigError(f"unknown power source {self.power_source!r}")
        if self.power_source == "external_file" and not self.power_path:
            raise ConfigError("external_file power source needs power_path")

    @classmethod
    def from_env(cls, **kw) -> "BackendConfig":
        """Build a config, letting EEPROBE_BACKEND / EEPROBE_MSR_PATH override."""
        env_kind = os.environ.get("EEPROBE_BACKEND")
        if env_kind:
            kw["kind"] = env_kind
        env_msr = os.environ.get("EEPROBE_MSR_PATH")
        if env_msr:
            kw["msr_path_template"] = env_msr
        cfg = cls(**kw)
        if cfg.kind == "hardware" and "power_source" not in kw:
            cfg = dataclasses.replace(cfg, power_source="rapl")
        return cfg

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "sim"}
        if self.cpus is not None:
            d["cpus"] = list(self.cpus)
        if self.kind == "simulation":
            d["sim"] = self.sim.to_dict()
        return d
