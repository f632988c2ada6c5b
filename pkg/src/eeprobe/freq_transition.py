"""
Frequency-transition detection and the core P-state / uncore experiments.

A transition shows up in a latency trace in two ways: the processor halts
for a moment (one access takes far longer than the rest) and afterwards the
per-access latency settles at a new level. `detect_transition` finds the
halt; `reflect_index` finds where performance matches a calibrated level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import build_histogram
from .chase import average_access_cycles, build_preset
from .core import DEFAULT_TOLERANCE, Histogram, LatencyTrace, TransitionMeasurement, cycles_to_us, us_to_cycles
from .errors import ConfigError, UnsupportedFrequency, VerificationFailure
from .hwif.base import preserve_state
from .hwif.registers import UNCORE_RATIO_KHZ

DEFAULT_THRESHOLD_CYCLES = 20_000
THRESHOLD_SCALE_FROM_CYCLES = 2_000

REFLECT_WINDOW = 64
REFLECT_TOLERANCE = 0.05


@dataclass(frozen=True)
class GapEvent:
    index: int
    gap_cycles: int
    gap_us: float

    def to_dict(self):
        return {"index": self.index, "gap_cycles": self.gap_cycles, "gap_us": self.gap_us}


def effective_threshold(baseline_cycles: float, threshold_cycles: int = DEFAULT_THRESHOLD_CYCLES) -> int:
    """Scale the threshold with slow probes (e.g. DRAM chases) so halts still stand out."""
    if baseline_cycles > THRESHOLD_SCALE_FROM_CYCLES:
        return int(math.ceil(threshold_cycles * baseline_cycles / THRESHOLD_SCALE_FROM_CYCLES))
    return int(threshold_cycles)


def detect_transition(trace: LatencyTrace, threshold_cycles: int = DEFAULT_THRESHOLD_CYCLES,
                      start: int = 0) -> GapEvent | None:
    """First entry at or after ``start`` whose duration exceeds the threshold."""
    hits = np.flatnonzero(trace.durations[start:] > threshold_cycles)
    if hits.size == 0:
        return None
    i = int(hits[0]) + start
    gap = int(trace.durations[i])
    return GapEvent(index=i, gap_cycles=gap, gap_us=cycles_to_us(gap, trace.tsc_khz))


def reflect_index(durations, target_cycles: float, window: int = REFLECT_WINDOW,
                  tol: float = REFLECT_TOLERANCE) -> int | None:
    """
    First index k where the ``window`` entries starting at k average within
    ``tol`` of the target and entry k itself is within ``tol`` too.
    """
    d = np.asarray(durations, dtype=np.float64)
    if d.size < window:
        return None
    cs = np.concatenate(([0.0], np.cumsum(d)))
    means = (cs[window:] - cs[:-window]) / window
    band = tol * target_cycles
    ok = (np.abs(means - target_cycles) <= band) & (np.abs(d[:means.size] - target_cycles) <= band)
    hits = np.flatnonzero(ok)
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# core P-states

@dataclass
class CoreTransitionRun:
    from_khz: int
    to_khz: int
    trigger: str
    samples_cycles: list[int]
    tsc_khz: int
    histogram: Histogram
    iteration_cycles: dict[int, float]
    quantum_cycles: float
    timeouts: int = 0

    @property
    def samples_us(self) -> list[float]:
        return [cycles_to_us(c, self.tsc_khz) for c in self.samples_cycles]

    @property
    def quantum_us(self) -> float:
        return cycles_to_us(self.quantum_cycles, self.tsc_khz)


def _compute_baseline(hw, cpu, khz, iter_cycles, settle_us, n=4096) -> float:
    hw.set_core_frequency(cpu, khz)
    hw.sleep_us(settle_us)
    hw.timed_compute(cpu, iter_cycles, n)
    trace = hw.timed_compute(cpu, iter_cycles, n)
    return float(np.median(trace.durations))


def _wait_reflect(hw, cpu, target, iter_cycles, chunk, max_wait_cycles, window, tol):
    """Run the compute probe until it reflects ``target``; returns the window's start time or None."""
    t_begin = hw.now_cycles()
    tail_d = np.empty(0, dtype=np.int64)
    tail_s = np.empty(0, dtype=np.int64)
    while hw.now_cycles() - t_begin <= max_wait_cycles:
        tr = hw.timed_compute(cpu, iter_cycles, chunk)
        d = np.concatenate((tail_d, tr.durations))
        s = np.concatenate((tail_s, tr.starts))
        k = reflect_index(d, target, window, tol)
        if k is not None:
            return int(s[k])
        keep = window - 1
        tail_d, tail_s = d[-keep:], s[-keep:]
    return None


def measure_core_transition(hw, from_khz: int, to_khz: int, trigger: str = "random", reps: int = 1000,
                            cpu: int = 0, seed: int = 0, bin_width_us: float = 25.0,
                            iter_cycles: int = 300, window: int = REFLECT_WINDOW,
                            tol: float = REFLECT_TOLERANCE, settle_us: float = 5000.0,
                            random_span_us: float = 1000.0, max_wait_us: float = 50_000.0,
                            sink: list | None = None) -> CoreTransitionRun:
    """
    Time from a P-state request until the compute probe runs at the target
    speed, repeated ``reps`` times.

    ``trigger="random"`` idles a random time before each request;
    ``"immediate"`` requests as soon as the probe has confirmed the source
    frequency, i.e. right after the previous switch took effect.
    """
    if trigger not in ("random", "immediate"):
        raise ConfigError(f"trigger must be random or immediate, got {trigger!r}")
    freqs = hw.selectable_frequencies(cpu)
    for khz in (from_khz, to_khz):
        if khz not in freqs:
            raise UnsupportedFrequency(f"{khz} kHz is not a selectable P-state")
    rng = np.random.default_rng(seed)
    T = hw.tsc_khz
    max_wait = us_to_cycles(max_wait_us, T)
    samples = sink if sink is not None else []
    timeouts = 0
    with preserve_state(hw):
        hw.pin_to_cpu(cpu)
        base = {khz: _compute_baseline(hw, cpu, khz, iter_cycles, settle_us)
                for khz in sorted({from_khz, to_khz})}
        from_chunk = 256 if trigger == "immediate" else 4096
        for _ in range(reps):
            hw.set_core_frequency(cpu, from_khz)
            if _wait_reflect(hw, cpu, base[from_khz], iter_cycles, from_chunk, max_wait, window, tol) is None:
                timeouts += 1
                continue
            if trigger == "random":
                hw.sleep_us(float(rng.uniform(0.0, random_span_us)))
            hw.set_core_frequency(cpu, to_khz)
            t_req = hw.now_cycles()
            t_hit = _wait_reflect(hw, cpu, base[to_khz], iter_cycles, 4096, max_wait, window, tol)
            if t_hit is None:
                timeouts += 1
                continue
            samples.append(max(0, t_hit - t_req))
    quantum = max(base.values()) + hw.timer_overhead_cycles()
    hist = build_histogram([cycles_to_us(c, T) for c in samples], bin_width_us) if samples else \
        Histogram(0.0, bin_width_us, (), 0)
    return CoreTransitionRun(from_khz, to_khz, trigger, list(samples), T, hist, base, quantum, timeouts)


# ---------------------------------------------------------------------------
# uncore

def filter_invalid(samples, expected_before: float, expected_after: float,
                   tol_fraction: float = DEFAULT_TOLERANCE):
    """Split measurements by whether both latencies match expectations; validity is re-stamped."""
    accepted, rejected = [], []
    for m in samples:
        ok = (abs(m.latency_before_cycles - expected_before) <= tol_fraction * expected_before
              and abs(m.latency_after_cycles - expected_after) <= tol_fraction * expected_after)
        (accepted if ok else rejected).append(m.with_validity(ok))
    return accepted, rejected


@dataclass
class UncoreRun:
    measurements: list[TransitionMeasurement]
    expected_before_cycles: float
    expected_after_cycles: float
    threshold_cycles: int
    write_overhead_cycles: float
    tsc_khz: int
    missed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def accepted(self) -> list[TransitionMeasurement]:
        return [m for m in self.measurements if m.valid]

    @property
    def rejected(self) -> list[TransitionMeasurement]:
        return [m for m in self.measurements if not m.valid]


def _ratio(khz: int) -> int:
    if khz % UNCORE_RATIO_KHZ:
        raise UnsupportedFrequency(f"uncore frequency {khz} kHz is not a multiple of 100 MHz")
    return khz // UNCORE_RATIO_KHZ


def calibrate_llc_latency(hw, cpu, buffer, uncore_khz, settle_us, n=2048) -> float:
    """Mean LLC chase latency with the uncore pinned to ``uncore_khz``."""
    r = _ratio(uncore_khz)
    hw.set_uncore_range(r, r)
    hw.sleep_us(settle_us)
    return average_access_cycles(hw.timed_chase(cpu, buffer, n))


def _chase_until_gap(hw, cpu, buffer, threshold, max_wait_cycles, after_window, chunk=4096):
    """Chase until a halt is found and ``after_window`` accesses follow it."""
    t0 = hw.now_cycles()
    parts = []
    found = None
    offset = 0
    while True:
        tr = hw.timed_chase(cpu, buffer, chunk)
        if found is None:
            ev = detect_transition(tr, threshold)
            if ev is not None:
                found = offset + ev.index
        parts.append(tr)
        offset += len(tr)
        if found is not None and offset - found - 1 >= after_window:
            break
        if found is None and hw.now_cycles() - t0 > max_wait_cycles:
            break
    return LatencyTrace.concat(parts), found


def _measurement(trace, idx, t_ref, before, after_window, tsc_khz):
    du = int(trace.durations[idx])
    start = int(trace.timestamps[idx]) - du
    after = average_access_cycles(trace, idx + 1, idx + 1 + after_window)
    return TransitionMeasurement(t_delay_cycles=max(0, start - t_ref),
                                 t_gap_cycles=max(0, int(round(du - before))),
                                 latency_before_cycles=before, latency_after_cycles=after,
                                 tsc_khz=tsc_khz)


def _timeout_measurement(trace, t_ref, before, after_window, tsc_khz):
    after = average_access_cycles(trace, max(0, len(trace) - after_window), len(trace))
    return TransitionMeasurement(int(trace.timestamps[-1]) - t_ref, 0, before, after, tsc_khz, False)


def measure_uncore_forced(hw, low_khz: int = 1_400_000, high_khz: int = 2_400_000, reps: int = 1000,
                          cpu: int = 0, core_khz: int = 2_400_000, buffer=None, seed: int = 0,
                          before_window: int = 512, after_window: int = 512,
                          interval_estimate_us: float = 1500.0, max_wait_us: float = 10_000.0,
                          threshold_cycles: int = DEFAULT_THRESHOLD_CYCLES,
                          tol: float = DEFAULT_TOLERANCE, sink: list | None = None) -> UncoreRun:
    """
    Switch a pinned uncore from ``low_khz`` to ``high_khz`` while an LLC chase
    runs and time the halt. t_delay counts from the return of the register
    write to the start of the halted access; t_gap is that access minus the
    mean latency before the switch.
    """
    lo_r, hi_r = _ratio(low_khz), _ratio(high_khz)
    buffer = buffer or build_preset("llc", seed)
    rng = np.random.default_rng(seed)
    T = hw.tsc_khz
    settle = 3 * interval_estimate_us
    out = sink if sink is not None else []
    missed = 0
    overhead = []
    with preserve_state(hw):
        hw.pin_to_cpu(cpu)
        hw.set_core_frequency(cpu, core_khz)
        hw.spin_chase(cpu, buffer, buffer.num_lines)
        exp_after = calibrate_llc_latency(hw, cpu, buffer, high_khz, settle)
        exp_before = calibrate_llc_latency(hw, cpu, buffer, low_khz, settle)
        threshold = effective_threshold(max(exp_before, exp_after), threshold_cycles)
        for _ in range(reps):
            hw.set_uncore_range(lo_r, lo_r)
            hw.sleep_us(settle + float(rng.uniform(0.0, interval_estimate_us)))
            before = average_access_cycles(hw.timed_chase(cpu, buffer, before_window))
            t0 = hw.now_cycles()
            hw.set_uncore_range(hi_r, hi_r)
            t_req = hw.now_cycles()
            overhead.append(t_req - t0)
            trace, idx = _chase_until_gap(hw, cpu, buffer, threshold, us_to_cycles(max_wait_us, T),
                                          after_window)
            if idx is None:
                missed += 1
                out.append(_timeout_measurement(trace, t_req, before, after_window, T))
                continue
            m = _measurement(trace, idx, t_req, before, after_window, T)
            acc, _ = filter_invalid([m], exp_before, exp_after, tol)
            out.append(m.with_validity(bool(acc)))
    return UncoreRun(list(out), exp_before, exp_after, threshold,
                     float(np.mean(overhead)) if overhead else 0.0, T, missed)


def measure_uncore_controlloop(hw, reps: int = 200, cpu: int = 0, core_khz: int = 2_400_000,
                               low_khz: int = 1_400_000, high_khz: int = 2_400_000,
                               train_laps: int = 1000, min_train_us: float = 30_000.0,
                               llc_buffer=None, l1_buffer=None, seed: int = 0,
                               before_window: int = 512, after_window: int = 512,
                               interval_estimate_us: float = 1500.0, max_wait_us: float = 50_000.0,
                               threshold_cycles: int = DEFAULT_THRESHOLD_CYCLES,
                               tol: float = DEFAULT_TOLERANCE, sink: list | None = None) -> UncoreRun:
    """
    Let the uncore's own control loop react to a workload change: an L1 chase
    trains it down, then an LLC chase starts and the time until the halt is
    t_controlloop + t_delay. Reps whose before/after latencies do not show
    the expected low -> high switch are kept but marked invalid.
    """
    llc = llc_buffer or build_preset("llc", seed)
    l1 = l1_buffer or build_preset("l1", seed)
    rng = np.random.default_rng(seed)
    T = hw.tsc_khz
    out = sink if sink is not None else []
    missed = 0
    with preserve_state(hw):
        hw.pin_to_cpu(cpu)
        hw.set_core_frequency(cpu, core_khz)
        lo_lim, hi_lim = hw.uncore_ratio_limits()
        hw.spin_chase(cpu, llc, llc.num_lines)
        settle = 3 * interval_estimate_us
        exp_after = calibrate_llc_latency(hw, cpu, llc, high_khz, settle)
        exp_before = calibrate_llc_latency(hw, cpu, llc, low_khz, settle)
        threshold = effective_threshold(max(exp_before, exp_after), threshold_cycles)
        hw.set_uncore_range(lo_lim, hi_lim)
        min_train = us_to_cycles(min_train_us, T)
        for _ in range(reps):
            # otherwise every rep would hit the update grid at the same phase
            hw.sleep_us(float(rng.uniform(0.0, interval_estimate_us)))
            t_train = hw.now_cycles()
            hw.spin_chase(cpu, l1, train_laps * l1.num_lines)
            while hw.now_cycles() - t_train < min_train:
                hw.spin_chase(cpu, l1, train_laps * l1.num_lines)
            t_switch = hw.now_cycles()
            trace, idx = _chase_until_gap(hw, cpu, llc, threshold, us_to_cycles(max_wait_us, T),
                                          after_window)
            if idx is None or idx == 0:
                missed += 1
                before = average_access_cycles(trace, 0, min(before_window, len(trace)))
                out.append(_timeout_measurement(trace, t_switch, before, after_window, T))
                continue
            before = average_access_cycles(trace, max(0, idx - before_window), idx)
            m = _measurement(trace, idx, t_switch, before, after_window, T)
            acc, _ = filter_invalid([m], exp_before, exp_after, tol)
            out.append(m.with_validity(bool(acc)))
    if reps and not any(m.valid for m in out):
        raise VerificationFailure(
            f"no repetition showed the expected LLC latencies ({exp_before:.1f} -> {exp_after:.1f} "
            "cycles); the uncore did not switch between the assumed frequencies")
    return UncoreRun(list(out), exp_before, exp_after, threshold, 0.0, T, missed)
