"""
Real-hardware backend: MSR device files, cpufreq/cpuidle sysfs, RAPL,
perf raw events and pinned worker processes.

All paths come from `BackendConfig` templates so the backend can be pointed
at a fake tree. Timestamps come from the OS monotonic clock scaled to TSC
cycles with ``tsc_khz``; the Python interpreter adds tens of nanoseconds per
probe, which is reported by `timer_overhead_cycles` and not subtracted.
"""

from __future__ import annotations

import ctypes
import multiprocessing as mp
import os
import re
import struct
import threading
import time
from itertools import count
from pathlib import Path

import numpy as np

from ..core import LatencyTrace, PowerSample
from ..errors import (BackendUnavailable, CStateUnavailable, EventUnavailable, GovernorUnavailable,
                      InvalidCPU, PermissionDenied, RegisterUnavailable, SourceUnavailable,
                      UnsupportedFrequency)
from . import registers as regs
from .base import Backend, CpuInfo, WakeRecord
from .power import open_power_source

_COMPUTE_UNIT_CYCLES = 100


def _read(path) -> str:
    return Path(path).read_text().strip()


def _write(path, value) -> None:
    try:
        Path(path).write_text(f"{value}\n")
    except PermissionError as exc:
        raise PermissionDenied(f"cannot write {path}: {exc}") from exc


def _sched_getcpu() -> int:
    libc = ctypes.CDLL(None, use_errno=True)
    return int(libc.sched_getcpu())


def _detect_tsc_khz(cpufreq_dir: Path) -> int:
    try:
        return int(_read(cpufreq_dir / "base_frequency"))
    except (OSError, ValueError):
        pass
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                m = re.search(r"model name.*@\s*([\d.]+)\s*GHz", line)
                if m:
                    return int(float(m.group(1)) * 1e6)
    except OSError:
        pass
    return 1_000_000


def _xor_kernel(v1: int, v2: int):
    words1 = np.array([(v1 >> (64 * i)) & (2**64 - 1) for i in range(8)], dtype=np.uint64)
    words2 = np.array([(v2 >> (64 * i)) & (2**64 - 1) for i in range(8)], dtype=np.uint64)
    # 8 independent register pairs
    a = np.tile(words1, 8)
    b = np.tile(words2, 8)

    def step():
        np.bitwise_xor(b, a, out=b)
    return step


def _heavy_kernel(memory: bool):
    a = np.full(64, 1.0000001)
    c = np.zeros(64)
    stream = np.ones(4 * 1024 * 1024) if memory else None

    def step():
        np.multiply(a, a, out=c)
        np.add(c, a, out=c)
        if stream is not None:
            stream.sum()
    return step


def _serializing_step():
    time.perf_counter_ns()
    os.getppid()


def _scalar_step():
    x = 1
    for _ in range(16):
        x = (x * 3 + 1) & 0xFFFF


def _phase_worker(cpu, conn):
    os.sched_setaffinity(0, {cpu})
    kernels = {}
    while True:
        msg = conn.recv()
        if msg is None:
            return
        kind, start_ns, end_ns, memory = msg
        key = (kind, memory)
        if key not in kernels:
            if kind == "avx512_heavy":
                kernels[key] = _heavy_kernel(memory)
            elif kind == "serializing":
                kernels[key] = _serializing_step
            else:
                kernels[key] = _scalar_step
        step = kernels[key]
        while time.monotonic_ns() < start_ns:
            pass
        while time.monotonic_ns() < end_ns:
            step()
        conn.send(time.monotonic_ns())


def _background_worker(cpu, kind, params, stop):
    os.sched_setaffinity(0, {cpu})
    if kind == "xor512":
        step = _xor_kernel(params.get("v1", 0), params.get("v2", 0))
    else:
        step = _scalar_step
    while not stop.is_set():
        for _ in range(1000):
            step()


class HardwareBackend(Backend):
    kind = "hardware"

    def __init__(self, config):
        super().__init__(config)
        self._msr_fds: dict[int, int] = {}
        self._perf: dict[tuple[int, str], object] = {}
        self._handles = count(1)
        self._background: dict[int, tuple[list, object]] = {}
        self._phase_pool: dict[int, tuple] = {}
        self._topology = self._discover_topology()
        self.tsc_khz = config.tsc_khz or _detect_tsc_khz(self._cpufreq_dir(self._topology[0].cpu))
        self._power = None

    # ------------------------------------------------------------ topology

    def _discover_topology(self) -> list[CpuInfo]:
        cpus = self.config.cpus
        if cpus is None:
            cpus = sorted(os.sched_getaffinity(0))
        out = []
        for cpu in cpus:
            tdir = Path(self.config.topology_path_template.format(cpu=cpu))
            try:
                core = int(_read(tdir / "core_id"))
                pkg = int(_read(tdir / "physical_package_id"))
            except (OSError, ValueError):
                core, pkg = cpu, 0
            out.append(CpuInfo(cpu=int(cpu), core=core, package=pkg))
        if not out:
            raise BackendUnavailable("no CPUs available")
        return out

    def topology(self):
        return list(self._topology)

    # ------------------------------------------------------------ time

    def now_cycles(self, cpu=None) -> int:
        return time.perf_counter_ns() * self.tsc_khz // 1_000_000

    def _ns_to_cycles(self, ns):
        return ns * self.tsc_khz // 1_000_000

    def sleep_us(self, us):
        if us < 0:
            raise ValueError("cannot sleep a negative time")
        if us >= 2000:
            time.sleep(us * 1e-6)
            return
        end = time.perf_counter_ns() + int(us * 1000)
        while time.perf_counter_ns() < end:
            pass

    # ------------------------------------------------------------ MSRs

    def _msr_fd(self, cpu):
        fd = self._msr_fds.get(cpu)
        if fd is None:
            path = self.config.msr_path_template.format(cpu=cpu)
            try:
                fd = os.open(path, os.O_RDWR)
            except PermissionError as exc:
                raise PermissionDenied(
                    f"no access to {path}; load the msr module and run as root "
                    "(or grant CAP_SYS_RAWIO)") from exc
            except FileNotFoundError as exc:
                raise BackendUnavailable(f"{path} does not exist; is the msr module loaded?") from exc
            self._msr_fds[cpu] = fd
        return fd

    def _read_msr(self, cpu, address):
        fd = self._msr_fd(cpu)
        try:
            data = os.pread(fd, 8, address)
        except OSError as exc:
            raise RegisterUnavailable(f"reading MSR {address:#x} on CPU {cpu} failed: {exc}") from exc
        if len(data) != 8:
            raise RegisterUnavailable(f"short read of MSR {address:#x} on CPU {cpu}")
        return struct.unpack("<Q", data)[0]

    def _write_msr(self, cpu, address, value):
        fd = self._msr_fd(cpu)
        try:
            os.pwrite(fd, struct.pack("<Q", value), address)
        except OSError as exc:
            raise RegisterUnavailable(f"writing MSR {address:#x} on CPU {cpu} failed: {exc}") from exc

    def uncore_ratio_limits(self):
        # the boot value of 0x620 describes the platform's range
        if not hasattr(self, "_uncore_limits"):
            lo, hi = regs.decode_uncore_ratio_limit(
                self.read_msr(self._topology[0].cpu, regs.MSR_UNCORE_RATIO_LIMIT))
            self._uncore_limits = (lo, hi) if lo <= hi else (hi, lo)
        return self._uncore_limits

    # ------------------------------------------------------------ frequency

    def _cpufreq_dir(self, cpu) -> Path:
        return Path(self.config.cpufreq_path_template.format(cpu=cpu))

    def selectable_frequencies(self, cpu=0):
        d = self._cpufreq_dir(cpu)
        try:
            freqs = sorted(int(x) for x in _read(d / "scaling_available_frequencies").split())
            if freqs:
                return freqs
        except (OSError, ValueError):
            pass
        try:
            lo = int(_read(d / "cpuinfo_min_freq"))
            hi = int(_read(d / "cpuinfo_max_freq"))
        except (OSError, ValueError) as exc:
            raise GovernorUnavailable(f"no cpufreq information under {d}") from exc
        return list(range(lo, hi + 1, 100_000))

    def governor(self, cpu):
        try:
            return _read(self._cpufreq_dir(cpu) / "scaling_governor")
        except OSError as exc:
            raise GovernorUnavailable(f"cpufreq not available for CPU {cpu}") from exc

    def set_governor(self, cpu, name):
        _write(self._cpufreq_dir(cpu) / "scaling_governor", name)

    def set_core_frequency(self, cpu, khz):
        self.check_cpu(cpu)
        gov = self.governor(cpu)
        if gov != "userspace":
            raise GovernorUnavailable(f"CPU {cpu} uses governor {gov!r}; userspace is required")
        if khz not in self.selectable_frequencies(cpu):
            raise UnsupportedFrequency(f"{khz} kHz is not a selectable P-state of CPU {cpu}")
        _write(self._cpufreq_dir(cpu) / "scaling_setspeed", khz)

    def core_frequency_request(self, cpu):
        try:
            return int(_read(self._cpufreq_dir(cpu) / "scaling_setspeed"))
        except (OSError, ValueError):
            return None

    # ------------------------------------------------------------ counters / power

    def read_counter(self, cpu, event):
        self.check_cpu(cpu)
        if event == "aperf":
            return self.read_msr(cpu, regs.IA32_APERF)
        if event == "pperf":
            return self.read_msr(cpu, regs.MSR_PPERF)
        if event not in regs.PERF_RAW_EVENTS:
            raise EventUnavailable(f"unknown counter event {event!r}")
        key = (cpu, event)
        if key not in self._perf:
            from .perf import RawCounter
            self._perf[key] = RawCounter(cpu, regs.PERF_RAW_EVENTS[event], event)
        return self._perf[key].read()

    def sample_power(self) -> PowerSample:
        with self._power_lock:
            if self._power is None:
                if self.config.power_source == "simulated":
                    raise SourceUnavailable("the hardware backend has no simulated power source")
                self._power = open_power_source(self.config, self.packages())
            return self._power.sample()

    # ------------------------------------------------------------ placement

    def pin_to_cpu(self, cpu):
        self.check_cpu(cpu)
        try:
            os.sched_setaffinity(0, {cpu})
        except OSError as exc:
            raise InvalidCPU(f"cannot pin to CPU {cpu}: {exc}") from exc

    def current_cpu(self):
        return _sched_getcpu()

    # ------------------------------------------------------------ workloads

    def _traverse(self, buffer, n, record):
        # a memoryview load is a real 8-byte load from the chase buffer
        mem = memoryview(buffer.memory()).cast("B").cast("q")
        off = 0
        if not record:
            for _ in range(n):
                off = mem[off >> 3]
            return None
        clock = time.perf_counter_ns
        stamps = [0] * n
        for i in range(n):
            off = mem[off >> 3]
            stamps[i] = clock()
        return stamps

    def _stamps_to_trace(self, start_ns, stamps):
        ts = self._ns_to_cycles(np.asarray(stamps, dtype=np.int64))
        # stamps equal at the clock's resolution are nudged to stay strictly increasing
        floor = self._ns_to_cycles(start_ns) + 1 + np.arange(ts.size, dtype=np.int64)
        ts = np.maximum.accumulate(np.maximum(ts, floor) - np.arange(ts.size)) + np.arange(ts.size)
        du = np.diff(ts, prepend=self._ns_to_cycles(start_ns))
        return LatencyTrace(ts, du, self.tsc_khz)

    def timed_chase(self, cpu, buffer, num_accesses):
        self.pin_to_cpu(cpu)
        if num_accesses == 0:
            return LatencyTrace([], [], self.tsc_khz)
        start = time.perf_counter_ns()
        stamps = self._traverse(buffer, num_accesses, True)
        return self._stamps_to_trace(start, stamps)

    def spin_chase(self, cpu, buffer, num_accesses):
        self.pin_to_cpu(cpu)
        self._traverse(buffer, num_accesses, False)

    def timed_compute(self, cpu, core_cycles_per_iter, n):
        self.pin_to_cpu(cpu)
        if n == 0:
            return LatencyTrace([], [], self.tsc_khz)
        reps = max(1, core_cycles_per_iter // _COMPUTE_UNIT_CYCLES)
        clock = time.perf_counter_ns
        stamps = [0] * n
        start = clock()
        x = 1
        for i in range(n):
            for _ in range(reps):
                x = (x * 3 + 1) & 0xFFFF
            stamps[i] = clock()
        return self._stamps_to_trace(start, stamps)

    def count_work(self, cpu, duration_s):
        self.pin_to_cpu(cpu)
        end = time.perf_counter_ns() + int(duration_s * 1e9)
        iters = 0
        x = 1
        clock = time.perf_counter_ns
        while clock() < end:
            for _ in range(64):
                x = (x * 3 + 1) & 0xFFFF
            iters += 1
        return iters

    def _phase_workers(self, cpus):
        ctx = mp.get_context("fork")
        for cpu in cpus:
            if cpu not in self._phase_pool:
                parent, child = ctx.Pipe()
                proc = ctx.Process(target=_phase_worker, args=(cpu, child), daemon=True)
                proc.start()
                self._phase_pool[cpu] = (proc, parent)
        return [self._phase_pool[c][1] for c in cpus]

    def run_phase(self, cpus, kind, duration_cycles, memory=False):
        if kind not in ("avx512_heavy", "serializing", "scalar"):
            raise ValueError(f"unknown phase kind {kind!r}")
        conns = self._phase_workers([self.check_cpu(c) for c in cpus])
        dur_ns = int(duration_cycles * 1_000_000 // self.tsc_khz)
        # shared epoch: every worker starts and stops on the same monotonic deadline
        start = time.monotonic_ns() + 1_000_000
        for conn in conns:
            conn.send((kind, start, start + dur_ns, memory))
        ends = [conn.recv() for conn in conns]
        return max(ends) - start

    def start_background(self, cpus, kind, **params):
        if kind not in ("busy", "xor512"):
            raise ValueError(f"unknown background kind {kind!r}")
        ctx = mp.get_context("fork")
        stop = ctx.Event()
        procs = []
        for cpu in cpus:
            self.check_cpu(cpu)
            proc = ctx.Process(target=_background_worker, args=(cpu, kind, params, stop), daemon=True)
            proc.start()
            procs.append(proc)
        handle = next(self._handles)
        self._background[handle] = (procs, stop)
        return handle

    def stop_background(self, handle):
        entry = self._background.pop(handle, None)
        if entry is None:
            return
        procs, stop = entry
        stop.set()
        for proc in procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()

    def wakeup_pair(self, caller, callee, reps, sleep_s=1.0):
        """Listing-style cond_wait ping: the caller signals, the callee stamps on return."""
        self.check_cpu(caller)
        self.check_cpu(callee)
        if caller == callee:
            raise InvalidCPU("caller and callee must be different CPUs")
        cv = threading.Condition()
        state = {"waiting": False, "signalled": False, "wake": None, "error": None}
        records = []

        def callee_work():
            try:
                os.sched_setaffinity(0, {callee})
                for _ in range(reps):
                    with cv:
                        state["waiting"] = True
                        cv.notify_all()
                        while not state["signalled"]:
                            cv.wait()
                        state["wake"] = time.perf_counter_ns()
                        state["signalled"] = False
                        state["waiting"] = False
                        cv.notify_all()
            except Exception as exc:  # surfaced to the caller thread
                state["error"] = exc

        t = threading.Thread(target=callee_work, daemon=True)
        t.start()
        try:
            os.sched_setaffinity(0, {caller})
            for _ in range(reps):
                with cv:
                    while not state["waiting"] and state["error"] is None:
                        cv.wait(timeout=1.0)
                if state["error"] is not None:
                    raise state["error"]
                before = self.idle_usage(callee)
                time.sleep(sleep_s)
                with cv:
                    signal = time.perf_counter_ns()
                    state["signalled"] = True
                    cv.notify_all()
                    while state["waiting"]:
                        cv.wait()
                    wake = state["wake"]
                after = self.idle_usage(callee)
                delta = {k: after[k] - before.get(k, 0) for k in after if after[k] != before.get(k, 0)}
                records.append(WakeRecord(self._ns_to_cycles(signal), self._ns_to_cycles(wake), delta))
        finally:
            t.join(timeout=5)
        return records

    # ------------------------------------------------------------ idle states

    def _cpuidle_dir(self, cpu) -> Path:
        return Path(self.config.cpuidle_path_template.format(cpu=cpu))

    def _state_dirs(self, cpu) -> dict[str, Path]:
        d = self._cpuidle_dir(cpu)
        out = {}
        if not d.is_dir():
            return out
        for sd in sorted(d.glob("state*"), key=lambda p: int(p.name[5:] or 0)):
            try:
                out[_read(sd / "name")] = sd
            except OSError:
                continue
        return out

    def idle_states(self, cpu):
        self.check_cpu(cpu)
        return list(self._state_dirs(cpu))

    def _state_dir(self, cpu, name):
        dirs = self._state_dirs(cpu)
        if name not in dirs:
            raise CStateUnavailable(f"idle state {name!r} not available on CPU {cpu}")
        return dirs[name]

    def idle_state_disabled(self, cpu, name):
        return _read(self._state_dir(cpu, name) / "disable") == "1"

    def set_idle_state_disabled(self, cpu, name, disabled):
        _write(self._state_dir(cpu, name) / "disable", 1 if disabled else 0)

    def idle_usage(self, cpu):
        out = {}
        for name, sd in self._state_dirs(cpu).items():
            try:
                out[name] = int(_read(sd / "usage"))
            except (OSError, ValueError):
                pass
        return out

    # ------------------------------------------------------------ state

    def save_knobs(self):
        saved = {"governor": {}, "core_khz": {}, "uncore_ratio_limit": {},
                 "clock_modulation": {}, "idle_disabled": {}}
        for info in self._topology:
            cpu = info.cpu
            try:
                saved["governor"][cpu] = self.governor(cpu)
            except GovernorUnavailable:
                pass
            req = self.core_frequency_request(cpu)
            if req is not None:
                saved["core_khz"][cpu] = req
            try:
                saved["clock_modulation"][cpu] = self.read_msr(cpu, regs.IA32_CLOCK_MODULATION)
            except (BackendUnavailable, RegisterUnavailable):
                pass
            states = {}
            for name, sd in self._state_dirs(cpu).items():
                try:
                    states[name] = _read(sd / "disable") == "1"
                except OSError:
                    pass
            saved["idle_disabled"][cpu] = states
        for pkg in self.packages():
            try:
                saved["uncore_ratio_limit"][pkg] = self.read_msr(self.first_cpu_of(pkg),
                                                                 regs.MSR_UNCORE_RATIO_LIMIT)
            except (BackendUnavailable, RegisterUnavailable):
                pass
        return saved

    def restore_knobs(self, saved):
        errors = []

        def attempt(fn, *args):
            try:
                fn(*args)
            except Exception as exc:  # keep restoring the rest
                errors.append(exc)

        # setspeed is only writable under userspace, so restore it before the governor
        for cpu, khz in saved.get("core_khz", {}).items():
            if self.core_frequency_request(cpu) != khz:
                attempt(_write, self._cpufreq_dir(cpu) / "scaling_setspeed", khz)
        for cpu, gov in saved.get("governor", {}).items():
            if self.governor(cpu) != gov:
                attempt(self.set_governor, cpu, gov)
        for pkg, raw in saved.get("uncore_ratio_limit", {}).items():
            attempt(self.write_msr, self.first_cpu_of(pkg), regs.MSR_UNCORE_RATIO_LIMIT, raw)
        for cpu, raw in saved.get("clock_modulation", {}).items():
            attempt(self.write_msr, cpu, regs.IA32_CLOCK_MODULATION, raw)
        for cpu, states in saved.get("idle_disabled", {}).items():
            for name, disabled in states.items():
                if self.idle_state_disabled(cpu, name) != disabled:
                    attempt(self.set_idle_state_disabled, cpu, name, disabled)
        if errors:
            raise errors[0]

    def check_access(self, needs=("msr", "cpufreq")) -> list[str]:
        """Return human-readable problems that would stop an experiment."""
        problems = []
        cpu = self._topology[0].cpu
        if "msr" in needs:
            path = self.config.msr_path_template.format(cpu=cpu)
            if not os.path.exists(path):
                problems.append(f"{path} missing: run 'modprobe msr'")
            elif not os.access(path, os.R_OK | os.W_OK):
                problems.append(f"{path} not read/writable: run as root or grant CAP_SYS_RAWIO")
        if "cpufreq" in needs:
            d = self._cpufreq_dir(cpu)
            if not (d / "scaling_setspeed").exists():
                problems.append(f"{d}/scaling_setspeed missing: cpufreq userspace control unavailable")
            elif not os.access(d / "scaling_setspeed", os.W_OK):
                problems.append(f"{d}/scaling_setspeed not writable: run as root")
        if "perf" in needs:
            try:
                level = int(_read("/proc/sys/kernel/perf_event_paranoid"))
            except (OSError, ValueError):
                level = 2
            if level > 0 and os.geteuid() != 0:
                problems.append("per-CPU perf events need root or kernel.perf_event_paranoid <= 0")
        if "cpuidle" in needs:
            d = self._cpuidle_dir(cpu)
            if not d.is_dir():
                problems.append(f"{d} missing: no cpuidle driver")
            elif not all(os.access(sd / "disable", os.W_OK) for sd in self._state_dirs(cpu).values()):
                problems.append(f"{d}/state*/disable not writable: run as root")
        if "power" in needs and self.config.power_source == "rapl":
            p = Path(self.config.rapl_path_template.format(package=0)) / "energy_uj"
            if not os.access(p, os.R_OK):
                problems.append(f"{p} not readable: run as root or use --power-file")
        return problems

    def close(self):
        for handle in list(self._background):
            self.stop_background(handle)
        for proc, conn in self._phase_pool.values():
            try:
                conn.send(None)
            except OSError:
                pass
            proc.join(timeout=2)
        self._phase_pool.clear()
        for fd in self._msr_fds.values():
            os.close(fd)
        self._msr_fds.clear()
        for c in self._perf.values():
            c.close()
        if self._power is not None:
            self._power.close()

