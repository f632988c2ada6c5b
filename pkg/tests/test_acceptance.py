"""The ten acceptance criteria, each at its stated tolerance, on the simulation backend."""

import time

import numpy as np
import pytest
from scipy import stats

from conftest import criterion
from eeprobe import aux_experiments, avx_license, calibrate, cli, cstate, datapower, freq_transition
from eeprobe.analysis import least_squares
from eeprobe.chase import build_chase, sattolo_cycle
from eeprobe.core import LatencyTrace, PowerSample, cycles_to_us
from eeprobe.errors import EEProbeError
from eeprobe.freq_transition import detect_transition
from eeprobe.hwif import SimBackend, SimParameters

SEED = 20190520


def test_c01_chase_cycle_property():
    with criterion(1, "chase visits every slot exactly once (1..1024 lines x 10 seeds, < 10 s)"):
        t0 = time.perf_counter()
        for seed in range(10):
            rng = np.random.default_rng(seed)
            for n in range(1, 1025):
                perm = sattolo_cycle(n, rng)
                seen = np.zeros(n, dtype=bool)
                cur = 0
                for _ in range(n):
                    assert not seen[cur]
                    seen[cur] = True
                    cur = perm[cur]
                assert cur == 0 and seen.all()
            # the same walk through the byte-offset encoding of a built buffer
            for n in (1, 2, 3, 64, 1024):
                buf = build_chase(n, 64, seed)
                mem = buf.memory()
                words = buf.stride_bytes // 8
                off, visited = 0, set()
                for _ in range(n):
                    visited.add(off)
                    off = int(mem[off // 8])
                assert off == 0 and len(visited) == n
                assert visited == {i * buf.stride_bytes for i in range(n)} and words >= 8
        assert time.perf_counter() - t0 < 10.0


def _synthetic_trace(rng, n, gap_index, gap_cycles, quantum):
    """True access durations, stamped by a clock that only advances in ``quantum`` steps."""
    true = rng.uniform(60.0, 140.0, size=n)
    true[gap_index] = gap_cycles
    done = 1_000_000.0 + np.cumsum(true)
    stamps = (np.floor(done / quantum) * quantum).astype(np.int64)
    durations = np.diff(np.concatenate(([np.floor((done[0] - true[0]) / quantum) * quantum], stamps)))
    return LatencyTrace(stamps, durations.astype(np.int64), 3_000_000)


def test_c02_gap_detector_fidelity():
    with criterion(2, "gap detector: exact index on 1000 traces, size within one timer quantum"):
        rng = np.random.default_rng(SEED)
        quantum = 25
        for _ in range(1000):
            n = int(rng.integers(256, 4096))
            k = int(rng.integers(0, n))
            gap = float(rng.uniform(25_000, 100_000))
            ev = detect_transition(_synthetic_trace(rng, n, k, gap, quantum))
            assert ev is not None and ev.index == k
            assert abs(ev.gap_cycles - gap) <= quantum


def test_c03_pstate_distribution():
    with criterion(3, "P-state transition time uniform on [0, 500 us] (chi-square p > 0.01), max <= 500 us + quantum"):
        hw = SimBackend(seed=SEED)
        run = freq_transition.measure_core_transition(hw, 1_500_000, 2_600_000, "random", reps=10_000,
                                                      seed=SEED)
        us = np.array(run.samples_us)
        assert us.size == 10_000 and run.timeouts == 0
        assert us.min() >= 0
        assert us.max() <= 500.0 + run.quantum_us
        bins = 20
        idx = np.minimum((us / (500.0 / bins)).astype(int), bins - 1)
        observed = np.bincount(idx, minlength=bins)
        p = stats.chisquare(observed).pvalue
        print(f"  chi-square p = {p:.4f}, max = {us.max():.2f} us, quantum = {run.quantum_us:.3f} us")
        assert p > 0.01


def test_c04_uncore_pipeline():
    with criterion(4, "uncore: t_gap in [14.5, 16] us, t_delay in [0, 1.5] ms, 20 % +- 3 rejected, control loop 9.8 ms + t_delay within 2 %"):
        hw = SimBackend(params=SimParameters(ufs_artifact_fraction=0.2), seed=SEED)
        run = freq_transition.measure_uncore_forced(hw, 1_400_000, 2_400_000, reps=1000, seed=SEED)
        assert len(run.measurements) == 1000
        acc = run.accepted
        gaps = np.array([m.t_gap_us for m in acc])
        delays = np.array([m.t_delay_us for m in acc])
        assert gaps.min() >= 14.5 and gaps.max() <= 16.0
        assert delays.min() >= 0.0 and delays.max() <= 1500.0
        rejected = len(run.rejected) / len(run.measurements)
        print(f"  rejected fraction {rejected:.3f}")
        assert abs(rejected - 0.20) <= 0.03

        loop = freq_transition.measure_uncore_controlloop(hw, reps=200, seed=SEED)
        loop_mean = np.mean([m.t_delay_us for m in loop.accepted])
        expected = 9800.0 + delays.mean()
        print(f"  control loop mean {loop_mean:.1f} us, expected {expected:.1f} us")
        assert abs(loop_mean - expected) <= 0.02 * expected


def test_c05_cstate_sweep():
    with criterion(5, "C-state sweep: 100 samples per cell, C6 medians 33/42 us within 1 %, remote idle in [46, 48] us plus tail"):
        hw = SimBackend(seed=SEED)
        p = hw.p
        out = cstate.sweep(hw, ("C1", "C1E", "C6"), cstate.DEFAULT_SWEEP_KHZ, ("local", "remote_idle"),
                           reps=100)
        cells = cstate.cell_stats(out["samples"])
        assert len(cells) == 2 * 3 * 4
        assert all(s.n == 100 for s in cells.values())
        c6_nominal = cells[("local", "C6", 3_000_000)].p50
        c6_min = cells[("local", "C6", 1_200_000)].p50
        assert abs(c6_nominal - 33.0) <= 0.01 * 33.0
        assert abs(c6_min - 42.0) <= 0.01 * 42.0
        lo_tail, hi_tail = p.c6_remote_idle_tail_us_range
        for s in out["samples"]:
            if s.relation == "remote_idle" and s.cstate == "C6":
                assert 46.0 <= s.latency_us <= 48.0 or lo_tail <= s.latency_us <= hi_tail, s.latency_us


def test_c06_avx_license_accounting():
    with criterion(6, "AVX: throttle [62, 75] us and license-2 [555, 704] us per thread; worst case > 30 % / > 85 %; < 60 s"):
        t0 = time.perf_counter()
        hw = SimBackend(seed=SEED)
        cfg = avx_license.HighLowConfig(period_us=2_000_000, low_fraction_pct=50, duration_s=30,
                                        cpus=tuple(range(36)), core_khz=3_000_000)
        records = avx_license.run_high_low(cfg, hw)
        assert sorted(records) == list(range(36))
        for cpu, rs in records.items():
            high = [r for r in rs if r.kind == "High"]
            low = [r for r in rs if r.kind == "Low"]
            assert len(high) == len(low) == cfg.iterations == 15
            for r in high:
                assert 62.0 <= cycles_to_us(r.cycles_throttled, cfg.core_khz) <= 75.0
            for r in low:
                assert 555.0 <= cycles_to_us(r.cycles_license2, avx_license.LICENSE2_KHZ) <= 704.0

        worst = avx_license.HighLowConfig(period_us=1000, low_fraction_pct=80, duration_s=1,
                                          cpus=tuple(range(36)), core_khz=3_000_000)
        records = avx_license.run_high_low(worst, SimBackend(seed=SEED), settle_us=5000)
        summary = avx_license.summarize_license(records, worst.core_khz)["aggregate"]
        print(f"  worst case: throttle fraction min {summary['throttle_fraction_high']['min']:.3f}, "
              f"license fraction min {summary['license_fraction_low']['min']:.3f}")
        assert summary["throttle_fraction_high"]["min"] > 0.30
        assert summary["license_fraction_low"]["min"] > 0.85
        assert time.perf_counter() - t0 < 60.0


PUBLISHED_MW = {2_400_000: (1.69, 0.46), 3_000_000: (3.13, 0.80)}


def test_c07_power_model_recovery():
    with criterion(7, "power model: coefficients within 5 % over 20 seeds, noiseless to 1e-9, trim(50) == 35"):
        sweep = datapower.default_sweep()
        for seed in range(20):
            hw = SimBackend(params=SimParameters(power_noise_w=0.5), seed=seed)
            fits = datapower.fit_power_model(datapower.run_sweep(hw, sweep, seed=seed), active_cores=36)
            for khz, (v1, v2) in PUBLISHED_MW.items():
                assert abs(fits[khz].coef["v1"] - v1) <= 0.05 * v1, (seed, khz, fits[khz].coef)
                assert abs(fits[khz].coef["v2"] - v2) <= 0.05 * v2, (seed, khz, fits[khz].coef)

        hw = SimBackend(params=SimParameters(power_noise_w=0.0, power_tau_s=0.0), seed=1)
        fits = datapower.fit_power_model(datapower.run_sweep(hw, sweep, seed=1), active_cores=36)
        for khz, (v1, v2) in PUBLISHED_MW.items():
            assert abs(fits[khz].coef["v1"] - v1) <= 1e-9 * v1
            assert abs(fits[khz].coef["v2"] - v2) <= 1e-9 * v2

        samples = [PowerSample(t_ns=i, watts=300.0, source="simulated") for i in range(50)]
        assert len(datapower.trim_samples(samples)) == 35


def _solve_normal_equations(A, y):
    """Gauss-Jordan elimination with partial pivoting on A^T A x = A^T y, in plain Python."""
    rows, cols = len(A), len(A[0])
    M = [[sum(A[k][i] * A[k][j] for k in range(rows)) for j in range(cols)]
         + [sum(A[k][i] * y[k] for k in range(rows))] for i in range(cols)]
    for c in range(cols):
        piv = max(range(c, cols), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        for r in range(cols):
            if r != c:
                f = M[r][c] / M[c][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [M[i][cols] / M[i][i] for i in range(cols)]


def test_c08_regression_oracle():
    with criterion(8, "least squares matches a normal-equations solve on 100 systems to 1e-9"):
        rng = np.random.default_rng(SEED)
        for _ in range(100):
            p = int(rng.integers(1, 6))
            n = int(rng.integers(p + 5, 80))
            X = rng.normal(0, 1, size=(n, p)) * rng.uniform(0.5, 5, size=p)
            y = rng.normal(0, 3) + X @ rng.normal(0, 2, size=p) + rng.normal(0, 0.5, size=n)
            fit = least_squares(X, y)
            A = [[1.0] + list(map(float, row)) for row in X]
            oracle = np.array(_solve_normal_equations(A, list(map(float, y))))
            got = np.array([fit.intercept_w] + [fit.coef[f"x{i}"] for i in range(p)])
            assert np.max(np.abs(got - oracle)) <= 1e-9 * max(1.0, np.max(np.abs(oracle)))


def _experiments(hw):
    """Each primary experiment at a small size; all run on the given backend."""
    return {
        "pstate": lambda: freq_transition.measure_core_transition(hw, 1_200_000, 3_000_000, reps=5),
        "ufs-forced": lambda: freq_transition.measure_uncore_forced(hw, reps=5),
        "ufs-loop": lambda: freq_transition.measure_uncore_controlloop(hw, reps=2, min_train_us=1000),
        "cstate": lambda: cstate.sweep(hw, ("C1", "C6"), (1_200_000, 3_000_000), ("local", "remote_idle"), reps=3),
        "avx": lambda: avx_license.run_high_low(avx_license.HighLowConfig(1000, 50, 1, (0, 1, 2)), hw),
        "datapower": lambda: datapower.run_xor_point(0xFF, 0xFFFF, 2_400_000, 5.0, hw),
        "tstate": lambda: aux_experiments.measure_tstate_sweep(hw, (2, 8), 0.01),
        "pperf": lambda: aux_experiments.measure_pperf_ratio("stall_chase", 0.01, hw),
        "calibrate": lambda: calibrate.calibrate(hw, presets=("l1", "llc")),
    }


# the primitive each experiment leans on; failing it mid-run must still restore every knob
_FAULT_POINTS = {
    "pstate": "timed_compute", "ufs-forced": "timed_chase", "ufs-loop": "timed_chase",
    "cstate": "wakeup_pair", "avx": "run_phase", "datapower": "sample_power",
    "tstate": "count_work", "pperf": "spin_chase", "calibrate": "timed_chase",
}


class _Injected(EEProbeError):
    pass


def _perturb_knobs(hw):
    # start from non-default knobs so a restore to defaults would be caught
    hw.set_core_frequency(0, 2_000_000)
    hw.set_core_frequency(1, 1_700_000)
    hw.write_msr(0, 0x620, (13 << 8) | 22)
    hw.set_idle_state_disabled(0, "C1E", True)


def test_c09_state_hygiene():
    with criterion(9, "state hygiene: only counters change, knobs restored on success and injected errors"):
        for name in _FAULT_POINTS:
            hw = SimBackend(seed=SEED)
            _perturb_knobs(hw)
            before = hw.snapshot()
            _experiments(hw)[name]()
            after = hw.snapshot()
            assert after["knobs"] == before["knobs"], name
            assert set(after) == set(before) == {"knobs", "counters", "t"}
            assert not hw.busy_cpus()

        for name, method in _FAULT_POINTS.items():
            for fail_after in (0, 1):
                hw = SimBackend(seed=SEED)
                _perturb_knobs(hw)
                before = hw.snapshot()["knobs"]
                real = getattr(hw, method)
                calls = {"n": 0}

                def failing(*a, _real=real, _calls=calls, _k=fail_after, **kw):
                    _calls["n"] += 1
                    if _calls["n"] > _k:
                        raise _Injected(f"{method} failed")
                    return _real(*a, **kw)

                setattr(hw, method, failing)
                with pytest.raises(_Injected):
                    _experiments(hw)[name]()
                assert hw.snapshot()["knobs"] == before, (name, fail_after)
                assert not hw.busy_cpus(), name


CLI_RUNS = {
    "pstate": ["pstate", "--from", "1200000", "--to", "2400000", "--reps", "40"],
    "ufs-forced": ["ufs-forced", "--reps", "30"],
    "ufs-loop": ["ufs-loop", "--reps", "3", "--train-laps", "10"],
    "cstate": ["cstate", "--reps", "5", "--relations", "local,remote_idle"],
    "avx": ["avx", "-t", "2", "--cpus", "0-3"],
    "datapower": ["datapower", "--duration-s", "5"],
    "tstate": ["tstate", "--levels", "1-15", "--duration-s", "0.05"],
    "pperf": ["pperf", "--duration-s", "0.05"],
    "chase-calibrate": ["chase-calibrate"],
}


def test_c10_determinism(tmp_path, capsys):
    with criterion(10, "identical config and seed give byte-identical report JSON"):
        for name, argv in CLI_RUNS.items():
            blobs = []
            for attempt in ("a", "b"):
                out = tmp_path / f"{name}-{attempt}"
                assert cli.run(argv + ["--backend", "sim", "--seed", "7", "--out", str(out)]) == 0
                blobs.append((out / f"{name}.json").read_bytes())
            assert blobs[0] == blobs[1], name
            other = tmp_path / f"{name}-seed8"
            cli.run(argv + ["--backend", "sim", "--seed", "8", "--out", str(other)])
            assert (other / f"{name}.json").read_bytes() != blobs[0], name
        capsys.readouterr()
