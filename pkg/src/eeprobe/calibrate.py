"""Platform file: what later runs need to know about the machine."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .chase import PRESETS, build_preset, run_chase
from .core import SCHEMA_VERSION, canonical_json
from .errors import ConfigError, EEProbeError


def calibrate(hw, seed: int = 0, accesses: int = 4096, presets=None, cpu: int | None = None) -> dict:
    """Measure TSC rate, timer overhead, chase baselines, idle states and frequency ranges."""
    cpu = hw.cpus()[0] if cpu is None else cpu
    hw.pin_to_cpu(cpu)
    baselines = {}
    for name in (presets or PRESETS):
        buf = build_preset(name, seed)
        trace = run_chase(buf, accesses, hw, cpu)
        baselines[name] = float(np.median(trace.durations))
    try:
        idle = hw.idle_states(cpu)
    except EEProbeError:
        idle = []
    try:
        freqs = hw.selectable_frequencies(cpu)
    except EEProbeError:
        freqs = []
    try:
        uncore = list(hw.uncore_ratio_limits())
    except EEProbeError:
        uncore = None
    return {
        "schema": SCHEMA_VERSION,
        "backend": hw.kind,
        "tsc_khz": hw.tsc_khz,
        "timer_overhead_cycles": hw.timer_overhead_cycles(),
        "chase_presets": {k: PRESETS[k] for k in (presets or PRESETS)},
        "chase_baseline_cycles": baselines,
        "idle_states": idle,
        "core_frequencies_khz": freqs,
        "uncore_ratio_limits": uncore,
        "topology": [[c.cpu, c.core, c.package] for c in hw.topology()],
    }


def write_platform(path, platform: dict) -> None:
    Path(path).write_text(canonical_json(platform))


def load_platform(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read platform file {path}: {exc}") from exc
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"platform file {path} has unsupported schema {data.get('schema')}")
    return data
