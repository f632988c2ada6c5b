"""
Data-dependent power: an all-core 512-bit XOR loop whose operands have
controlled popcounts, and a linear per-bit model fitted to the measured
power.

Model::

    P = intercept + c1 * popcnt(v1) * cores + c2 * max(0, popcnt(v2) - popcnt(v1)) * cores

with c1, c2 in mW per bit per core.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import least_squares
from .core import PowerSample, RegressionFit, check_single_source
from .errors import ConfigError, RangeViolation, RankDeficient, TooFewSamples
from .hwif.base import preserve_state

WIDTH_BITS = 512
MIN_SAMPLES = 50
TRIM_HEAD = 10
TRIM_TAIL = 5
XOR_UNROLL = 8  # independent zmm pairs in the kernel
FREQ_DRIFT_TOLERANCE = 0.01


def make_operand(popcount: int, width_bits: int = WIDTH_BITS, seed: int = 0) -> int:
    """A ``width_bits`` pattern with exactly ``popcount`` bits set at seeded positions."""
    if not 0 <= popcount <= width_bits:
        raise RangeViolation(f"popcount must lie in 0..{width_bits}, got {popcount}")
    rng = np.random.default_rng(seed)
    positions = rng.choice(width_bits, size=popcount, replace=False)
    value = 0
    for p in positions.tolist():
        value |= 1 << p
    return value


@dataclass
class SweepPoint:
    popcnt_v1: int
    popcnt_v2: int
    core_khz: int
    samples: list[PowerSample]
    duration_s: float = 0.0
    flagged: bool = False
    freq_cv: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in (self.popcnt_v1, self.popcnt_v2):
            if not 0 <= p <= WIDTH_BITS:
                raise RangeViolation(f"popcounts must lie in 0..{WIDTH_BITS}")
        if len(self.samples) < MIN_SAMPLES:
            raise TooFewSamples(f"a sweep point needs at least {MIN_SAMPLES} samples, got {len(self.samples)}")
        check_single_source(self.samples)

    def trimmed_watts(self, head=TRIM_HEAD, tail=TRIM_TAIL) -> np.ndarray:
        return np.array([s.watts for s in trim_samples(self.samples, head, tail)])

    def to_dict(self):
        return {"popcnt_v1": self.popcnt_v1, "popcnt_v2": self.popcnt_v2, "core_khz": self.core_khz,
                "duration_s": self.duration_s, "flagged": self.flagged, "freq_cv": self.freq_cv,
                "samples": [s.to_dict() for s in self.samples]}


def trim_samples(samples, head: int = TRIM_HEAD, tail: int = TRIM_TAIL):
    if len(samples) <= head + tail:
        raise TooFewSamples(f"need more than {head + tail} samples to trim, got {len(samples)}")
    return list(samples[head:len(samples) - tail])


def run_xor_point(v1: int, v2: int, core_khz: int, duration_s: float, hw, cpus=None,
                  sample_interval_s: float = 0.1, min_samples: int = MIN_SAMPLES,
                  settle_us: float = 2000.0) -> SweepPoint:
    """
    Run ``v2 ^= v1`` on every CPU in ``cpus`` (default: one thread per core)
    and sample power every ``sample_interval_s`` from this context, which
    never runs the kernel.
    """
    if not 0 <= v1 < 2**WIDTH_BITS or not 0 <= v2 < 2**WIDTH_BITS:
        raise RangeViolation("operands must fit in 512 bits")
    cpus = list(cpus) if cpus is not None else hw.one_cpu_per_core()
    n = max(min_samples, int(round(duration_s / sample_interval_s)))
    probe = cpus[0]
    samples, freqs = [], []
    with preserve_state(hw):
        for c in cpus:
            hw.set_core_frequency(c, core_khz)
        hw.sleep_us(settle_us)
        handle = hw.start_background(cpus, "xor512", v1=v1, v2=v2,
                                     v1_popcount=bin(v1).count("1"), v2_popcount=bin(v2).count("1"))
        try:
            a0, t0 = hw.read_counter(probe, "aperf"), hw.now_cycles()
            for _ in range(n):
                hw.sleep_us(sample_interval_s * 1e6)
                samples.append(hw.sample_power())
                a1, t1 = hw.read_counter(probe, "aperf"), hw.now_cycles()
                if t1 > t0:
                    freqs.append((a1 - a0) / (t1 - t0) * hw.tsc_khz)
                a0, t0 = a1, t1
        finally:
            hw.stop_background(handle)
    freqs = np.array(freqs[TRIM_HEAD:len(freqs) - TRIM_TAIL] or freqs, dtype=float)
    cv = float(freqs.std() / freqs.mean()) if freqs.size and freqs.mean() > 0 else 0.0
    return SweepPoint(bin(v1).count("1"), bin(v2).count("1"), core_khz, samples,
                      duration_s=n * sample_interval_s, flagged=cv > FREQ_DRIFT_TOLERANCE, freq_cv=cv)


def design_row(popcnt_v1: int, popcnt_v2: int, active_cores: int) -> tuple[float, float]:
    return float(popcnt_v1 * active_cores), float(max(0, popcnt_v2 - popcnt_v1) * active_cores)


def fit_power_model(points, active_cores: int, head: int = TRIM_HEAD,
                    tail: int = TRIM_TAIL) -> dict[int, RegressionFit]:
    """One least-squares fit per core frequency on the mean trimmed power of each point."""
    if active_cores <= 0:
        raise ConfigError("active_cores must be > 0")
    by_khz: dict[int, list] = {}
    for p in points:
        by_khz.setdefault(p.core_khz, []).append(p)
    fits = {}
    for khz, pts in sorted(by_khz.items()):
        configs = {(p.popcnt_v1, p.popcnt_v2) for p in pts}
        if len(configs) < 3:
            raise RankDeficient(f"{khz} kHz: need at least 3 distinct popcount configurations, "
                                f"got {len(configs)}")
        X = np.array([design_row(p.popcnt_v1, p.popcnt_v2, active_cores) for p in pts])
        y = np.array([p.trimmed_watts(head, tail).mean() for p in pts])
        raw = least_squares(X, y, names=["v1", "v2"])
        fits[khz] = RegressionFit(intercept_w=raw.intercept_w,
                                  coef={"v1": raw.coef["v1"] * 1e3, "v2": raw.coef["v2"] * 1e3},
                                  rss=raw.rss, n=raw.n)
    return fits


def predict_power(fit: RegressionFit, popcnt_v1: int, popcnt_v2: int, active_cores: int) -> float:
    x1, x2 = design_row(popcnt_v1, popcnt_v2, active_cores)
    return fit.intercept_w + (fit.coef["v1"] * x1 + fit.coef["v2"] * x2) * 1e-3


# ---------------------------------------------------------------------------
# sweep files

def default_sweep(levels=(0, 128, 256, 384, 512), frequencies=(2_400_000, 3_000_000),
                  duration_s: float = 5.0) -> list[dict]:
    return [{"popcnt_v1": a, "popcnt_v2": b, "khz": khz, "duration_s": duration_s}
            for khz in frequencies for a in levels for b in levels]


def load_sweep(path) -> list[dict]:
    try:
        items = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep file {path}: {exc}") from exc
    if not isinstance(items, list):
        raise ConfigError("a sweep file holds a JSON list of points")
    out = []
    for i, it in enumerate(items):
        try:
            out.append({"popcnt_v1": int(it["popcnt_v1"]), "popcnt_v2": int(it["popcnt_v2"]),
                        "khz": int(it["khz"]), "duration_s": float(it["duration_s"])})
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"sweep point {i}: {exc}") from exc
    return out


def run_sweep(hw, sweep: list[dict], seed: int = 0, cpus=None, sample_interval_s: float = 0.1,
              sink: list | None = None) -> list[SweepPoint]:
    points = sink if sink is not None else []
    for i, item in enumerate(sweep):
        v1 = make_operand(item["popcnt_v1"], seed=seed * 7919 + 2 * i)
        v2 = make_operand(item["popcnt_v2"], seed=seed * 7919 + 2 * i + 1)
        points.append(run_xor_point(v1, v2, item["khz"], item["duration_s"], hw, cpus,
                                    sample_interval_s))
    return points


def point_rows(points, head: int = TRIM_HEAD, tail: int = TRIM_TAIL) -> list[dict]:
    rows = []
    for i, p in enumerate(points):
        w = p.trimmed_watts(head, tail)
        rows.append({"point": i, "popcnt_v1": p.popcnt_v1, "popcnt_v2": p.popcnt_v2,
                     "khz": p.core_khz, "mean_w": float(w.mean()),
                     "stdev_w": float(w.std(ddof=1)) if w.size > 1 else 0.0,
                     "n_trimmed": int(w.size), "flagged": p.flagged})
    return rows
