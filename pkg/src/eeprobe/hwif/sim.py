"""
Deterministic simulation of the reference Skylake-SP system.

A single virtual TSC clock advances only when a workload primitive or a
sleep is executed. Frequency requests take effect on a fixed update grid
(per package, random phase), uncore switches stall the probe for a gap,
and counters, C-state exits, license transitions and power follow
`SimParameters`. Identical parameters, seed and call sequence give
identical results.
"""

from __future__ import annotations

import math
from itertools import count

import numpy as np

from ..core import LatencyTrace, PowerSample, cycles_to_us, us_to_cycles
from ..errors import (CStateUnavailable, EventUnavailable, GovernorUnavailable, InvalidCPU, RegisterUnavailable,
                      UnmodeledRegister, UnsupportedFrequency)
from . import registers as regs
from .base import Backend, CpuInfo, WakeRecord
from .params import SimParameters
from .power import FilePowerSource

IDLE_STATES = ("POLL", "C1", "C1E", "C6")
_DEPTH = {"POLL": 0, "C1": 1, "C1E": 2, "C6": 3}


def _solve_inverse_model(f1, y1, f2, y2):
    """Return ``(a, b)`` with ``y = a + b / f`` through both points."""
    b = (y1 - y2) / (1.0 / f1 - 1.0 / f2)
    return y1 - b / f1, b


class SimBackend(Backend):
    kind = "simulation"

    def __init__(self, config=None, params: SimParameters | None = None, seed: int | None = None):
        if config is None:
            from .params import BackendConfig
            config = BackendConfig(kind="simulation", sim=params or SimParameters(),
                                   seed=seed or 0)
        super().__init__(config)
        self.p = p = params or config.sim
        self.seed = config.seed if seed is None else seed
        self.tsc_khz = p.tsc_khz
        self._rng = np.random.default_rng(self.seed)

        n_pc = p.packages * p.cores_per_package
        self._topology = [CpuInfo(cpu=i, core=(i % n_pc) % p.cores_per_package,
                                  package=(i % n_pc) // p.cores_per_package)
                          for i in range(p.num_cpus)]
        self._pkg = [c.package for c in self._topology]
        cpus = range(p.num_cpus)
        pkgs = range(p.packages)

        self._t = 0.0
        self._t_bg = 0.0
        self._pinned = None

        self._governor = {c: "userspace" for c in cpus}
        self._core_req = {c: p.nominal_core_khz for c in cpus}
        self._core_khz = {c: p.nominal_core_khz for c in cpus}
        self._core_pending: dict[int, tuple[float, int]] = {}
        p_int = us_to_cycles(p.pstate_update_interval_us, self.tsc_khz)
        self._pgrid = {k: (float(self._rng.uniform(0, p_int)), p_int) for k in pkgs}

        self._reg620 = {k: regs.encode_uncore_ratio_limit(p.uncore_ratio_min, p.uncore_ratio_max)
                        for k in pkgs}
        self._uncore_khz = {k: p.ufs_loop_low_khz for k in pkgs}
        self._uncore_events: dict[int, list] = {k: [] for k in pkgs}
        u_int = us_to_cycles(p.ufs_update_interval_us, self.tsc_khz)
        self._ugrid = {k: (float(self._rng.uniform(0, u_int)), u_int) for k in pkgs}
        self._demand = {k: "low" for k in pkgs}

        self._clock_mod = {c: 0 for c in cpus}
        self._idle_disabled = {c: {s: False for s in IDLE_STATES} for c in cpus}
        self._idle_usage = {c: {s: 0 for s in IDLE_STATES} for c in cpus}

        self._counters = {(c, e): 0.0 for c in cpus for e in ("aperf", "mperf", "pperf",
                                                              "throttle", "license2")}
        self._license_until = {c: -math.inf for c in cpus}
        self._throttle_center: dict[int, float] = {}

        self._handles = count(1)
        self._background: dict[int, tuple[tuple[int, ...], str, dict]] = {}

        self._power_level = p.power_idle_w
        self._power_t_change = 0.0
        self._power_target = p.power_idle_w

        self._power_file = (FilePowerSource(config.power_path)
                            if config.power_source == "external_file" else None)

        self._llc_core_cycles, self._llc_uncore_cycles = self._llc_model()
        self._c6_model = _solve_inverse_model(p.core_khz_min / 1e6, p.c6_wake_us_minfreq,
                                              p.nominal_core_khz / 1e6, p.c6_wake_us_nominal)

    # ------------------------------------------------------------------ model

    def _llc_model(self):
        """Split LLC latency into core-clocked and uncore-clocked cycle counts."""
        p = self.p
        T = self.tsc_khz
        a_tsc, b = _solve_inverse_model(p.ufs_llc_ref_low_khz, p.ufs_llc_cycles_low,
                                        p.ufs_llc_ref_high_khz, p.ufs_llc_cycles_high)
        core_cycles = a_tsc * p.ufs_llc_ref_core_khz / T
        uncore_cycles = b / T
        return core_cycles, uncore_cycles

    def footprint_class(self, footprint_bytes: int) -> str:
        p = self.p
        if footprint_bytes <= p.l1_bytes:
            return "l1"
        if footprint_bytes <= p.l2_bytes:
            return "l2"
        if footprint_bytes <= p.llc_bytes:
            return "llc"
        return "dram"

    def access_latency(self, level: str, core_khz: int, uncore_khz: int) -> float:
        """Latency of one dependent load in TSC cycles."""
        p, T = self.p, self.tsc_khz
        if level == "l1":
            return float(round(p.l1_latency_core_cycles * T / core_khz))
        if level == "l2":
            return float(round(p.l2_latency_core_cycles * T / core_khz))
        llc = self._llc_core_cycles * T / core_khz + self._llc_uncore_cycles * T / uncore_khz
        if level == "llc":
            return float(round(llc))
        return float(round(llc + p.dram_extra_ns * T / 1e6))

    def c6_wake_us(self, core_khz: int) -> float:
        a, b = self._c6_model
        return a + b / (core_khz / 1e6)

    def effective_duty(self, cpu: int) -> float:
        level = self._clock_mod_level(cpu)
        if level == 0 or level in self.p.tstate_unimplemented_levels:
            return 1.0
        return max(regs.nominal_duty(level) - self.p.tstate_excess_skip, 1.0 / 64)

    def _clock_mod_level(self, cpu):
        return regs.decode_clock_modulation(self._clock_mod[cpu])

    # ------------------------------------------------------------ topology

    def topology(self):
        return list(self._topology)

    def package_of(self, cpu):
        if not 0 <= cpu < len(self._pkg):
            raise InvalidCPU(f"CPU {cpu} is not part of the topology")
        return self._pkg[cpu]

    def check_cpu(self, cpu):
        self.package_of(cpu)
        return cpu

    def uncore_ratio_limits(self):
        return self.p.uncore_ratio_min, self.p.uncore_ratio_max

    # ------------------------------------------------------------ clock

    def now_cycles(self, cpu=None) -> int:
        return int(round(self._t))

    def timer_overhead_cycles(self) -> int:
        return int(self.p.timer_overhead_cycles)

    def now_ns(self) -> int:
        return int(round(self._t * 1e6 / self.tsc_khz))

    def sleep_us(self, us: float) -> None:
        if us < 0:
            raise ValueError("cannot sleep a negative time")
        for pkg in self._uncore_events:
            self._set_demand(pkg, "low")
        self._advance(self._t + us_to_cycles(us, self.tsc_khz))

    def _grid_after(self, grid, t):
        phase, interval = grid
        k = math.floor((t - phase) / interval) + 1
        return phase + k * interval

    def _all_events(self):
        for cpu, (t, _) in self._core_pending.items():
            yield t, ("core", cpu)
        for pkg, evs in self._uncore_events.items():
            if evs:
                yield evs[0][0], ("uncore", pkg)

    def _apply(self, which) -> float:
        kind, key = which
        if kind == "core":
            _, khz = self._core_pending.pop(key)
            self._core_khz[key] = khz
            return 0.0
        _, khz, gap = self._uncore_events[key].pop(0)
        if khz is not None:
            self._uncore_khz[key] = khz
        return float(gap)

    def _advance(self, t_new: float) -> None:
        while True:
            due = [e for e in self._all_events() if e[0] <= t_new]
            if not due:
                break
            t_ev, which = min(due)
            self._accrue_background(max(t_ev, self._t_bg))
            self._apply(which)
        self._accrue_background(max(t_new, self._t_bg))
        self._t = max(self._t, t_new)

    def _accrue_background(self, t: float) -> None:
        dt = t - self._t_bg
        if dt > 0:
            for cpus, kind, _ in self._background.values():
                for cpu in cpus:
                    cyc = dt * self._core_khz[cpu] / self.tsc_khz * self.effective_duty(cpu)
                    self._count(cpu, aperf=cyc, mperf=dt, pperf=cyc)
        self._t_bg = t

    def _count(self, cpu, **deltas):
        for ev, v in deltas.items():
            self._counters[(cpu, ev)] += v

    # ------------------------------------------------------------ uncore

    def _uncore_target(self, pkg) -> int:
        p = self.p
        mn, mx = regs.decode_uncore_ratio_limit(self._reg620[pkg])
        if mn == mx:
            khz = mn * regs.UNCORE_RATIO_KHZ
        else:
            want = p.ufs_loop_high_khz if self._demand[pkg] == "high" else p.ufs_loop_low_khz
            khz = min(max(want, mn * regs.UNCORE_RATIO_KHZ), mx * regs.UNCORE_RATIO_KHZ)
        excess = self.package_power_w() - p.rapl_limit_long_w
        if excess > 0:
            steps = math.ceil(excess / p.uncore_clamp_w_per_ratio)
            ratio = max(p.uncore_ratio_min, khz // regs.UNCORE_RATIO_KHZ - steps)
            khz = ratio * regs.UNCORE_RATIO_KHZ
        return int(khz)

    def _schedule_uncore(self, pkg, t_request: float) -> None:
        p, T = self.p, self.tsc_khz
        target = self._uncore_target(pkg)
        evs = self._uncore_events[pkg]
        final = next((e[1] for e in reversed(evs) if e[1] is not None), self._uncore_khz[pkg])
        if target == final:
            return
        evs.clear()
        if target == self._uncore_khz[pkg]:
            return
        t_eff = self._grid_after(self._ugrid[pkg], t_request)
        lo, hi = (int(round(us_to_cycles(x, T))) for x in p.ufs_gap_us_range)
        gap = int(self._rng.integers(lo, hi + 1))
        if self._rng.random() < p.ufs_artifact_fraction:
            alo, ahi = (int(round(us_to_cycles(x, T))) for x in p.ufs_artifact_gap_us_range)
            evs.append((t_eff, None, int(self._rng.integers(alo, ahi + 1))))
            t_eff += self._ugrid[pkg][1]
        evs.append((t_eff, target, gap))

    def _set_demand(self, pkg, level):
        if self._demand[pkg] == level:
            return
        self._demand[pkg] = level
        delay = self.p.ufs_controlloop_ms * 1e3
        self._schedule_uncore(pkg, self._t + us_to_cycles(delay, self.tsc_khz))

    def uncore_khz(self, package=0) -> int:
        """Effective uncore frequency (simulation introspection only)."""
        self._advance(self._t)
        return self._uncore_khz[package]

    def core_khz(self, cpu) -> int:
        """Effective core frequency (simulation introspection only)."""
        self._advance(self._t)
        return self._core_khz[cpu]

    # ------------------------------------------------------------ MSRs

    def _read_msr(self, cpu, address):
        self._advance(self._t)
        if address == regs.MSR_UNCORE_RATIO_LIMIT:
            return self._reg620[self._pkg[cpu]]
        if address == regs.IA32_CLOCK_MODULATION:
            return self._clock_mod[cpu]
        if address == regs.IA32_APERF:
            return int(self._counters[(cpu, "aperf")]) % 2**64
        if address == regs.IA32_MPERF:
            return int(self._counters[(cpu, "mperf")]) % 2**64
        if address == regs.MSR_PPERF:
            return int(self._counters[(cpu, "pperf")]) % 2**64
        raise UnmodeledRegister(f"register {address:#x} is not modeled by the simulation")

    def _write_msr(self, cpu, address, value):
        self._advance(self._t)
        if address == regs.MSR_UNCORE_RATIO_LIMIT:
            pkg = self._pkg[cpu]
            self._reg620[pkg] = value & 0x7F7F
            self._schedule_uncore(pkg, self._t)
            return
        if address == regs.IA32_CLOCK_MODULATION:
            self._clock_mod[cpu] = value & 0x1F
            return
        if address in (regs.IA32_APERF, regs.IA32_MPERF, regs.MSR_PPERF):
            raise RegisterUnavailable(f"register {address:#x} is read-only in the simulation")
        raise UnmodeledRegister(f"register {address:#x} is not modeled by the simulation")

    # ------------------------------------------------------------ frequency

    def selectable_frequencies(self, cpu=0):
        p = self.p
        return list(range(p.core_khz_min, p.core_khz_max + 1, p.core_khz_step))

    def governor(self, cpu):
        self.check_cpu(cpu)
        return self._governor[cpu]

    def set_governor(self, cpu, name: str):
        self.check_cpu(cpu)
        self._governor[cpu] = name

    def set_core_frequency(self, cpu, khz):
        self.check_cpu(cpu)
        if self._governor[cpu] != "userspace":
            raise GovernorUnavailable(f"CPU {cpu} uses governor {self._governor[cpu]!r}, not userspace")
        if khz not in self.selectable_frequencies(cpu):
            raise UnsupportedFrequency(f"{khz} kHz is not a selectable P-state")
        self._advance(self._t)
        self._core_req[cpu] = khz
        t_eff = self._grid_after(self._pgrid[self._pkg[cpu]], self._t)
        self._core_pending[cpu] = (t_eff, khz)

    def core_frequency_request(self, cpu):
        return self._core_req[cpu]

    # ------------------------------------------------------------ counters / power

    def read_counter(self, cpu, event):
        self.check_cpu(cpu)
        if event not in regs.COUNTER_EVENTS:
            raise EventUnavailable(f"unknown counter event {event!r}")
        self._advance(self._t)
        return int(self._counters[(cpu, event)])

    def _system_power_target(self) -> float:
        p = self.p
        watts = p.power_idle_w
        for cpus, kind, params in self._background.values():
            if kind == "xor512":
                khz = self._core_khz[cpus[0]]
                cores = len(cpus)
                p1, p2 = params["v1_popcount"], params["v2_popcount"]
                base = _interp(p.power_base_w, khz)
                c1 = _interp(p.power_coef_v1_mw, khz) * 1e-3
                c2 = _interp(p.power_coef_v2_mw, khz) * 1e-3
                watts = base + c1 * p1 * cores + c2 * max(0, p2 - p1) * cores
            elif kind == "busy":
                watts += p.power_busy_w_per_cpu * len(cpus)
        return watts

    def package_power_w(self) -> float:
        p = self.p
        return (self._power_target - p.power_idle_w) / p.packages

    def _power_now(self) -> float:
        if self.p.power_tau_s == 0:
            return self._power_target
        dt_s = (self._t - self._power_t_change) / (self.tsc_khz * 1e3)
        w = math.exp(-dt_s / self.p.power_tau_s)
        return self._power_target + (self._power_level - self._power_target) * w

    def _retarget_power(self):
        self._power_level = self._power_now()
        self._power_t_change = self._t
        self._power_target = self._system_power_target()
        for pkg in self._uncore_events:
            self._schedule_uncore(pkg, self._t)

    def sample_power(self) -> PowerSample:
        with self._power_lock:
            if self._power_file is not None:
                return self._power_file.sample()
            self._advance(self._t)
            watts = self._power_now() + self._rng.normal(0.0, self.p.power_noise_w)
            return PowerSample(t_ns=self.now_ns(), watts=max(0.0, float(watts)), source="simulated")

    # ------------------------------------------------------------ placement

    def pin_to_cpu(self, cpu):
        self.check_cpu(cpu)
        self._pinned = cpu

    def current_cpu(self):
        return 0 if self._pinned is None else self._pinned

    # ------------------------------------------------------------ workloads

    def _trace(self, cpu, n, latency_fn, stall_fraction=1.0, record=True) -> LatencyTrace | None:
        self.check_cpu(cpu)
        if n < 0:
            raise ValueError("number of accesses must be >= 0")
        self._advance(self._t)
        if n == 0:
            return LatencyTrace([], [], self.tsc_khz) if record else None
        pkg = self._pkg[cpu]
        T = self.tsc_khz
        start = t = self._t
        parts = []
        carry = 0.0
        remaining = n
        aperf = 0.0
        while remaining > 0:
            candidates = []
            if cpu in self._core_pending:
                candidates.append((self._core_pending[cpu][0], ("core", cpu)))
            if self._uncore_events[pkg]:
                candidates.append((self._uncore_events[pkg][0][0], ("uncore", pkg)))
            ev_t, which = min(candidates) if candidates else (math.inf, None)
            if ev_t <= t:
                carry += self._apply(which)
                continue
            f = self._core_khz[cpu]
            L = latency_fn(f, self._uncore_khz[pkg])
            k = remaining if math.isinf(ev_t) else min(remaining, max(1, math.ceil((ev_t - t) / L)))
            if record:
                ends = t + carry + L * np.arange(1, k + 1, dtype=np.float64)
                t = float(ends[-1])
            else:
                t = t + carry + L * k
            carry = 0.0
            aperf += k * L * f / T
            if ev_t <= t:
                gap = self._apply(which)
                t += gap
                if record:
                    ends[-1] += gap
            remaining -= k
            if record:
                parts.append(ends)
        self._count(cpu, aperf=aperf, mperf=t - start, pperf=aperf * stall_fraction)
        if not record:
            self._advance(t)
            return None
        ends = np.concatenate(parts)
        ts = np.rint(ends).astype(np.int64)
        du = np.diff(ts, prepend=np.int64(round(start)))
        self._advance(t)
        return LatencyTrace(ts, du, T)

    def _chase_level(self, cpu, buffer):
        level = self.footprint_class(int(buffer.footprint_bytes))
        demand = "high" if level in ("llc", "dram") else "low"
        self._advance(self._t)
        self._set_demand(self._pkg[cpu], demand)
        stall = 1.0
        if level in ("llc", "dram") and not self.p.pperf_counts_stalled_cycles:
            stall = self.p.stall_productive_fraction
        return level, stall

    def timed_chase(self, cpu, buffer, num_accesses):
        level, stall = self._chase_level(cpu, buffer)
        return self._trace(cpu, num_accesses,
                           lambda f, u: self.access_latency(level, f, u), stall)

    def spin_chase(self, cpu, buffer, num_accesses):
        level, stall = self._chase_level(cpu, buffer)
        self._trace(cpu, num_accesses, lambda f, u: self.access_latency(level, f, u), stall,
                    record=False)

    def timed_compute(self, cpu, core_cycles_per_iter, n):
        self._advance(self._t)
        self._set_demand(self._pkg[cpu], "low")
        T = self.tsc_khz
        return self._trace(cpu, n, lambda f, u: core_cycles_per_iter * T / f
                           / self.effective_duty(cpu))

    def count_work(self, cpu, duration_s):
        self.check_cpu(cpu)
        self._advance(self._t)
        self._set_demand(self._pkg[cpu], "low")
        f = self._core_khz[cpu]
        duty = self.effective_duty(cpu)
        cycles = duration_s * f * 1e3 * duty
        self._count(cpu, aperf=cycles, mperf=duration_s * self.tsc_khz * 1e3, pperf=cycles)
        self._advance(self._t + duration_s * self.tsc_khz * 1e3)
        return int(cycles // self.p.work_cycles_per_iteration)

    def _throttle_us(self, cpu) -> float:
        lo, hi = self.p.avx_throttle_us_range
        if cpu not in self._throttle_center:
            self._throttle_center[cpu] = float(self._rng.uniform(lo, hi))
        value = self._throttle_center[cpu] + self._rng.normal(0.0, self.p.avx_throttle_jitter_us)
        return float(min(max(value, lo), hi))

    def _license_residency_us(self, high_us: float) -> float:
        lo, hi = self.p.avx_license_residency_us_range
        spread = min(1.0, high_us / self.p.avx_license_ramp_us)
        return hi - (hi - lo) * float(self._rng.random()) * spread

    def run_phase(self, cpus, kind, duration_cycles, memory=False):
        if kind not in ("avx512_heavy", "serializing", "scalar"):
            raise ValueError(f"unknown phase kind {kind!r}")
        cpus = [self.check_cpu(c) for c in cpus]
        self._advance(self._t)
        T = self.tsc_khz
        t0 = self._t
        D = float(duration_cycles)
        t1 = t0 + D
        for cpu in cpus:
            f = self._core_khz[cpu]
            f2 = min(f, self.p.license2_khz)
            if kind == "avx512_heavy":
                if self._license_until[cpu] > t0:
                    thr_tsc = 0.0
                else:
                    thr_tsc = min(us_to_cycles(self._throttle_us(cpu), T), D)
                throttled = thr_tsc * f / T
                lic = (D - thr_tsc) * f2 / T
                self._count(cpu, aperf=throttled + lic, mperf=D, pperf=throttled + lic,
                            throttle=throttled, license2=lic)
                res = self._license_residency_us(cycles_to_us(D, T))
                self._license_until[cpu] = t1 + us_to_cycles(res, T)
            else:
                in_l2 = max(0.0, min(self._license_until[cpu], t1) - t0)
                lic = in_l2 * f2 / T
                rest = (D - in_l2) * f / T
                self._count(cpu, aperf=lic + rest, mperf=D, pperf=lic + rest, license2=lic)
        self._advance(t1)
        return int(round(D * 1e6 / T))

    def start_background(self, cpus, kind, **params):
        if kind not in ("busy", "xor512"):
            raise ValueError(f"unknown background kind {kind!r}")
        cpus = tuple(self.check_cpu(c) for c in cpus)
        self._advance(self._t)
        handle = next(self._handles)
        self._background[handle] = (cpus, kind, dict(params))
        self._retarget_power()
        return handle

    def stop_background(self, handle):
        self._advance(self._t)
        if self._background.pop(handle, None) is not None:
            self._retarget_power()

    def busy_cpus(self) -> set[int]:
        return {c for cpus, _, _ in self._background.values() for c in cpus}

    def _callee_state(self, callee) -> str:
        enabled = [s for s in ("C1", "C1E", "C6") if not self._idle_disabled[callee][s]]
        state = enabled[-1] if enabled else "POLL"
        if _DEPTH[state] > 1 and self._rng.random() < self.p.cstate_demotion_prob:
            state = "C1"
        return state

    def _wake_latency_us(self, caller, callee, state) -> float:
        p = self.p
        jitter = float(self._rng.uniform(-p.wake_jitter_us, p.wake_jitter_us))
        if state == "POLL":
            return max(p.wake_signal_us + jitter, 0.05)
        if state == "C1":
            return p.c1_wake_us + jitter
        if state == "C1E":
            return p.c1e_wake_us + jitter
        pkg = self._pkg[callee]
        remote_idle = (pkg != self._pkg[caller]
                       and not any(self._pkg[c] == pkg for c in self.busy_cpus()))
        if remote_idle:
            if self._rng.random() < p.c6_remote_idle_tail_prob:
                return float(self._rng.uniform(*p.c6_remote_idle_tail_us_range))
            return float(self._rng.uniform(*p.c6_wake_us_remote_idle_range))
        return self.c6_wake_us(self._core_khz[callee]) + jitter

    def wakeup_pair(self, caller, callee, reps, sleep_s=1.0):
        self.check_cpu(caller)
        self.check_cpu(callee)
        if caller == callee:
            raise InvalidCPU("caller and callee must be different CPUs")
        T = self.tsc_khz
        out = []
        for _ in range(reps):
            self._advance(self._t + sleep_s * T * 1e3)
            state = self._callee_state(callee)
            lat = self._wake_latency_us(caller, callee, state)
            signal = self.now_cycles()
            wake = signal + max(1, int(round(us_to_cycles(lat, T))))
            self._idle_usage[callee][state] += 1
            out.append(WakeRecord(signal, wake, {state: 1}))
            self._advance(float(wake))
        return out

    # ------------------------------------------------------------ idle states

    def idle_states(self, cpu):
        self.check_cpu(cpu)
        return list(IDLE_STATES)

    def _check_state(self, name):
        if name not in IDLE_STATES:
            raise CStateUnavailable(f"idle state {name!r} is not available")

    def idle_state_disabled(self, cpu, name):
        self.check_cpu(cpu)
        self._check_state(name)
        return self._idle_disabled[cpu][name]

    def set_idle_state_disabled(self, cpu, name, disabled):
        self.check_cpu(cpu)
        self._check_state(name)
        self._idle_disabled[cpu][name] = bool(disabled)

    def idle_usage(self, cpu):
        self.check_cpu(cpu)
        return dict(self._idle_usage[cpu])

    # ------------------------------------------------------------ state

    def save_knobs(self):
        return {
            "governor": dict(self._governor),
            "core_khz": dict(self._core_req),
            "uncore_ratio_limit": dict(self._reg620),
            "clock_modulation": dict(self._clock_mod),
            "idle_disabled": {c: dict(v) for c, v in self._idle_disabled.items()},
        }

    def restore_knobs(self, saved):
        for cpu, g in saved["governor"].items():
            self._governor[cpu] = g
        for cpu, khz in saved["core_khz"].items():
            if self._core_req[cpu] != khz:
                gov = self._governor[cpu]
                self._governor[cpu] = "userspace"
                self.set_core_frequency(cpu, khz)
                self._governor[cpu] = gov
        for pkg, raw in saved["uncore_ratio_limit"].items():
            if self._reg620[pkg] != raw:
                self._write_msr(self.first_cpu_of(pkg), regs.MSR_UNCORE_RATIO_LIMIT, raw)
        self._clock_mod.update(saved["clock_modulation"])
        for cpu, states in saved["idle_disabled"].items():
            self._idle_disabled[cpu].update(states)

    def snapshot(self) -> dict:
        """Knobs plus counters and clock; experiments may only change the latter two."""
        return {"knobs": self.save_knobs(), "counters": dict(self._counters), "t": self._t}

    def close(self):
        if self._power_file is not None:
            self._power_file.close()


def _interp(table: dict, khz: int) -> float:
    """Linear interpolation (and extrapolation) of a per-frequency table."""
    keys = sorted(table)
    if khz in table:
        return float(table[khz])
    if len(keys) == 1:
        return float(table[keys[0]])
    lo, hi = (keys[0], keys[1]) if khz < keys[0] else (keys[-2], keys[-1])
    for a, b in zip(keys, keys[1:]):
        if a <= khz <= b:
            lo, hi = a, b
            break
    w = (khz - lo) / (hi - lo)
    return float(table[lo] + w * (table[hi] - table[lo]))
