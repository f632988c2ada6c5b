"""
Command line front end.

    eeprobe <experiment> [--backend sim|hw] [--out DIR] [--seed N] [--cpus LIST] [--json] ...

Every run writes ``<experiment>.json`` (the report), ``<experiment>.csv``
(one row per sample) and ``<experiment>.dat`` (gnuplot columns) into the
output directory. Exit status: 0 success, 1 experiment error or
interruption, 2 configuration or permission problem.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import aux_experiments, avx_license, calibrate, cstate, datapower, freq_transition
from .analysis import export, summarize
from .chase import build_preset
from .core import ExperimentReport, canonical_json, cycles_to_us
from .errors import (BackendUnavailable, ConfigError, EEProbeError, GovernorUnavailable, InvalidCPU,
                     RangeViolation, UnsupportedFrequency)
from .hwif import BackendConfig, open_backend, preserve_state
from .hwif.params import SimParameters

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

_CONFIG_ERRORS = (ConfigError, BackendUnavailable, InvalidCPU, UnsupportedFrequency, RangeViolation,
                  GovernorUnavailable)

# privileges each experiment needs on real hardware
NEEDS = {
    "pstate": ("cpufreq",),
    "ufs-forced": ("msr", "cpufreq"),
    "ufs-loop": ("msr", "cpufreq"),
    "cstate": ("cpufreq", "cpuidle"),
    "avx": ("msr", "perf", "cpufreq"),
    "datapower": ("msr", "cpufreq", "power"),
    "tstate": ("msr", "cpufreq"),
    "pperf": ("msr",),
    "chase-calibrate": (),
}


def parse_cpus(text: str) -> list[int]:
    """``"0-3,8,10-11"`` -> ``[0, 1, 2, 3, 8, 10, 11]``."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid CPU list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty CPU list")
    return sorted(set(out))


def _khz_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid frequency list {text!r}") from None


def _name_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--backend", choices=("sim", "simulation", "hw", "hardware"),
                   default=os.environ.get("EEPROBE_BACKEND", "sim"),
                   help="measurement backend (default: $EEPROBE_BACKEND or sim)")
    g.add_argument("--out", default="eeprobe-out", help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cpus", type=parse_cpus, help="logical CPUs to use, e.g. 0-35")
    g.add_argument("--json", action="store_true", help="print the report JSON to stdout")
    g.add_argument("--force", action="store_true",
                   help="switch CPUs to the userspace governor instead of refusing to run")
    g.add_argument("--sim-param", action="append", default=[], metavar="KEY=VALUE",
                   help="override a simulation parameter (repeatable)")
    g.add_argument("--platform", help="platform file written by chase-calibrate")
    g.add_argument("--power-file", help="read power from a 't_ns,watts' log instead of RAPL")
    g.add_argument("--msr-path", default=os.environ.get("EEPROBE_MSR_PATH"),
                   help="MSR device path template containing {cpu}")

    p = argparse.ArgumentParser(prog="eeprobe", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="experiment", required=True)

    s = sub.add_parser("pstate", parents=[common], help="core P-state transition latency")
    s.add_argument("--from", dest="from_khz", type=int, required=True)
    s.add_argument("--to", dest="to_khz", type=int, required=True)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--trigger", choices=("random", "immediate"), default="random")
    s.add_argument("--bin-width-us", type=float, default=25.0)

    s = sub.add_parser("ufs-forced", parents=[common], help="uncore switch forced through MSR 0x620")
    s.add_argument("--low", type=int, default=1_400_000, help="source uncore kHz")
    s.add_argument("--high", type=int, default=2_400_000, help="target uncore kHz")
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--core-khz", type=int, default=2_400_000)
    s.add_argument("--tolerance", type=float, default=0.10)
    s.add_argument("--bin-width-us", type=float, default=0.25)

    s = sub.add_parser("ufs-loop", parents=[common], help="uncore control-loop reaction time")
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--train-laps", type=int, default=1000, help="L1 chase laps per training round")
    s.add_argument("--low", type=int, default=1_400_000)
    s.add_argument("--high", type=int, default=2_400_000)
    s.add_argument("--core-khz", type=int, default=2_400_000)
    s.add_argument("--tolerance", type=float, default=0.10)
    s.add_argument("--bin-width-us", type=float, default=250.0)

    s = sub.add_parser("cstate", parents=[common], help="C-state wake-up latency sweep")
    s.add_argument("--cstates", type=_name_list, default=["C1", "C1E", "C6"])
    s.add_argument("--freqs", type=_khz_list, default=list(cstate.DEFAULT_SWEEP_KHZ))
    s.add_argument("--relations", type=_name_list, default=["local"])
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--sleep-s", type=float, default=1.0)

    s = sub.add_parser("avx", parents=[common], help="AVX-512 license throttling (High/Low)")
    s.add_argument("-l", "--low-pct", type=int, default=50, help="share of each period spent Low")
    s.add_argument("-p", "--period-us", type=int, default=2_000_000)
    s.add_argument("-t", "--duration-s", type=int, default=300)
    s.add_argument("--core-khz", type=int, default=3_000_000)
    s.add_argument("--memory", action="store_true", help="add streaming loads to the High kernel")

    s = sub.add_parser("datapower", parents=[common], help="data-dependent power sweep and fit")
    s.add_argument("--sweep", help="sweep definition JSON (default: 5x5 popcount grid at 2.4/3.0 GHz)")
    s.add_argument("--active-cores", type=int, help="cores in the per-core normalization (default: CPUs used)")
    s.add_argument("--sample-interval-s", type=float, default=0.1)
    s.add_argument("--duration-s", type=float, default=5.0, help="per point, default sweep only")

    s = sub.add_parser("tstate", parents=[common], help="clock-modulation effective duty cycle")
    s.add_argument("--levels", type=parse_cpus, default=list(range(1, 16)), help="e.g. 1-15")
    s.add_argument("--duration-s", type=float, default=1.0)
    s.add_argument("--core-khz", type=int)

    s = sub.add_parser("pperf", parents=[common], help="PPERF / APERF productivity ratio")
    s.add_argument("--workload", choices=("stall_chase", "compute", "both"), default="both")
    s.add_argument("--duration-s", type=float, default=1.0)

    sub.add_parser("chase-calibrate", parents=[common], help="write a platform file")
    return p


def backend_config(args) -> BackendConfig:
    kw = {"kind": args.backend, "seed": args.seed}
    if args.msr_path:
        kw["msr_path_template"] = args.msr_path
    if args.power_file:
        kw["power_source"] = "external_file"
        kw["power_path"] = args.power_file
    kind = {"sim": "simulation", "hw": "hardware"}.get(args.backend, args.backend)
    if kind == "simulation":
        kw["sim"] = SimParameters().override_from_strings(args.sim_param)
    elif args.sim_param:
        raise ConfigError("--sim-param only applies to the simulation backend")
    elif not args.power_file:
        kw["power_source"] = "rapl"
    return BackendConfig(**kw)


def _cpus(hw, args, single: bool):
    topo = set(hw.cpus())
    if args.cpus:
        bad = [c for c in args.cpus if c not in topo]
        if bad:
            raise InvalidCPU(f"CPUs {bad} are not part of this machine's topology")
        cpus = list(args.cpus)
    else:
        cpus = hw.one_cpu_per_core()
    return cpus[:1] if single else cpus


def _precheck(hw, args, cpus):
    """Every reason the hardware run cannot start, reported at once."""
    if hw.kind != "hardware":
        return
    problems = list(hw.check_access(NEEDS[args.experiment]))
    if "cpufreq" in NEEDS[args.experiment] and not problems:
        wrong = []
        for c in cpus:
            try:
                gov = hw.governor(c)
            except GovernorUnavailable as exc:
                problems.append(str(exc))
                break
            if gov != "userspace":
                wrong.append((c, gov))
        if wrong and not args.force:
            problems.append(f"{len(wrong)} CPU(s) not on the userspace governor (e.g. CPU {wrong[0][0]}: "
                            f"{wrong[0][1]}); set it or pass --force")
        elif wrong:
            for c, _ in wrong:
                hw.set_governor(c, "userspace")
    if problems:
        raise ConfigError("cannot run on this machine:\n  - " + "\n  - ".join(problems))


# ---------------------------------------------------------------------------
# experiments: each returns (results, extra_files, summary_lines) and fills `sink`

def _platform(args):
    return calibrate.load_platform(args.platform) if args.platform else None


def _pstate(hw, args, cpus, sink):
    run = freq_transition.measure_core_transition(
        hw, args.from_khz, args.to_khz, args.trigger, args.reps, cpu=cpus[0], seed=args.seed,
        bin_width_us=args.bin_width_us, sink=sink)
    us = run.samples_us
    results = {"histogram": run.histogram.to_dict(), "quantum_us": run.quantum_us,
               "iteration_cycles": {str(k): v for k, v in run.iteration_cycles.items()},
               "timeouts": run.timeouts, "tsc_khz": run.tsc_khz}
    lines = [f"{len(us)} transitions {args.from_khz} -> {args.to_khz} kHz ({args.trigger})"]
    if us:
        s = summarize(us)
        lines.append(f"transition time us: min {s.min:.1f}  median {s.p50:.1f}  max {s.max:.1f}")
        results["summary_us"] = s.to_dict()
    return results, {"hist": run.histogram}, lines


def _uncore_results(run, bin_width_us):
    from .analysis import build_histogram
    acc = run.accepted
    results = {"expected_before_cycles": run.expected_before_cycles,
               "expected_after_cycles": run.expected_after_cycles,
               "threshold_cycles": run.threshold_cycles, "missed": run.missed,
               "write_overhead_cycles": run.write_overhead_cycles, "tsc_khz": run.tsc_khz,
               "accepted": len(acc), "rejected": len(run.rejected)}
    extra = {}
    lines = [f"{len(acc)} accepted / {len(run.rejected)} rejected "
             f"(expected {run.expected_before_cycles:.1f} -> {run.expected_after_cycles:.1f} cycles)"]
    if acc:
        d = summarize([m.t_delay_us for m in acc])
        gp = summarize([m.t_gap_us for m in acc])
        results["t_delay_us"], results["t_gap_us"] = d.to_dict(), gp.to_dict()
        hist = build_histogram([m.t_delay_us for m in acc], bin_width_us)
        results["histogram_t_delay_us"] = hist.to_dict()
        extra["hist"] = hist
        lines.append(f"t_delay us: mean {d.mean:.1f}  min {d.min:.1f}  max {d.max:.1f}")
        lines.append(f"t_gap us:   mean {gp.mean:.2f}  min {gp.min:.2f}  max {gp.max:.2f}")
    return results, extra, lines


def _ufs_forced(hw, args, cpus, sink):
    buf = build_preset("llc", args.seed, _platform(args))
    run = freq_transition.measure_uncore_forced(hw, args.low, args.high, args.reps, cpu=cpus[0],
                                                core_khz=args.core_khz, buffer=buf, seed=args.seed,
                                                tol=args.tolerance, sink=sink)
    return _uncore_results(run, args.bin_width_us)


def _ufs_loop(hw, args, cpus, sink):
    plat = _platform(args)
    run = freq_transition.measure_uncore_controlloop(
        hw, args.reps, cpu=cpus[0], core_khz=args.core_khz, low_khz=args.low, high_khz=args.high,
        train_laps=args.train_laps, llc_buffer=build_preset("llc", args.seed, plat),
        l1_buffer=build_preset("l1", args.seed, plat), seed=args.seed, tol=args.tolerance, sink=sink)
    return _uncore_results(run, args.bin_width_us)


def _cstate(hw, args, cpus, sink):
    for cs in args.cstates:
        if cs not in cstate.CSTATES:
            raise ConfigError(f"unknown C-state {cs!r}; choose from {cstate.CSTATES}")
    for rel in args.relations:
        if rel not in cstate.RELATIONS:
            raise ConfigError(f"unknown relation {rel!r}; choose from {cstate.RELATIONS}")
    out = cstate.sweep(hw, args.cstates, args.freqs, args.relations, args.reps, args.sleep_s,
                       cpus=args.cpus, sink=sink)
    cells = {f"{r}/{c}/{k}": s.to_dict() for (r, c, k), s in cstate.cell_stats(out["samples"]).items()}
    lines = [f"{k}: median {v['p50']:.2f} us (n={v['n']})" for k, v in cells.items()]
    lines += [f"baseline {r}: {v:.2f} us" for r, v in out["baseline_us"].items()]
    return {"cells": cells, "baseline_us": out["baseline_us"],
            "flagged": sum(s.flagged for s in out["samples"])}, {}, lines


def _avx(hw, args, cpus, sink):
    cfg = avx_license.HighLowConfig(args.period_us, args.low_pct, args.duration_s, tuple(cpus),
                                    args.core_khz, args.memory)
    records = avx_license.run_high_low(cfg, hw, sink=sink)
    summary = avx_license.summarize_license(records, cfg.core_khz)
    agg = summary["aggregate"]
    lines = [f"{cfg.iterations} iterations on {len(cpus)} CPUs"]
    for name, st in agg.items():
        if st:
            lines.append(f"{name}: min {st['min']:.4g}  median {st['median']:.4g}  max {st['max']:.4g}")
    return {"iterations": cfg.iterations, "summary": summary,
            "drifted_phases": avx_license.drift_flags(records, cfg),
            "overruns": sum(r.overrun for rs in records.values() for r in rs)}, {}, lines


def _datapower(hw, args, cpus, sink):
    sweep = (datapower.load_sweep(args.sweep) if args.sweep
             else datapower.default_sweep(duration_s=args.duration_s))
    points = datapower.run_sweep(hw, sweep, seed=args.seed, cpus=cpus,
                                 sample_interval_s=args.sample_interval_s, sink=sink)
    cores = args.active_cores or len(cpus)
    fits = datapower.fit_power_model(points, cores)
    fit_json = {str(k): {**f.to_dict(), "coef_unit": "mW per bit per core"} for k, f in fits.items()}
    lines = [f"{k} kHz: v1 {f.coef['v1']:.3f} mW  v2 {f.coef['v2']:.3f} mW  intercept {f.intercept_w:.1f} W"
             for k, f in fits.items()]
    results = {"fits": fit_json, "active_cores": cores, "xor_unroll": datapower.XOR_UNROLL,
               "flagged_points": sum(p.flagged for p in points)}
    return results, {"fit": fit_json}, lines


def _tstate(hw, args, cpus, sink):
    res = aux_experiments.measure_tstate_sweep(hw, args.levels, args.duration_s, cpus[0], args.core_khz,
                                               sink=sink)
    lines = [f"level {r.level:2d}: nominal {r.nominal_duty:.3f}  effective {r.effective_duty:.3f}"
             + ("" if r.implemented else "  (not implemented)") for r in res]
    return {"monotone": aux_experiments.is_monotone(res)}, {}, lines


def _pperf(hw, args, cpus, sink):
    kinds = ("stall_chase", "compute") if args.workload == "both" else (args.workload,)
    for k in kinds:
        sink.append((k, aux_experiments.measure_pperf_ratio(k, args.duration_s, hw, cpus[0], args.seed)))
    return {}, {}, [f"{k}: pperf/aperf = {r:.4f}" for k, r in sink]


def _chase_calibrate(hw, args, cpus, sink):
    plat = calibrate.calibrate(hw, args.seed, cpu=cpus[0])
    sink.extend(sorted(plat["chase_baseline_cycles"].items()))
    lines = [f"tsc_khz {plat['tsc_khz']}  timer overhead {plat['timer_overhead_cycles']} cycles"]
    lines += [f"{k}: {v:.1f} cycles/access" for k, v in sink]
    return {"platform": plat}, {"platform": plat}, lines


def _rows(experiment, sink, tsc_khz):
    if experiment == "pstate":
        return [{"rep": i, "transition_us": cycles_to_us(c, tsc_khz), "transition_cycles": c}
                for i, c in enumerate(sink)]
    if experiment in ("ufs-forced", "ufs-loop"):
        return [{"rep": i, "t_delay_us": m.t_delay_us, "t_gap_us": m.t_gap_us,
                 "before_cycles": m.latency_before_cycles, "after_cycles": m.latency_after_cycles,
                 "valid": m.valid} for i, m in enumerate(sink)]
    if experiment == "cstate":
        return [{k: v for k, v in s.to_dict().items() if k != "usage_delta"} for s in sink]
    if experiment == "avx":
        return [{"cpu": r.cpu, "phase_index": r.index, "kind": r.kind, "cycles_total": r.cycles_total,
                 "cycles_throttled": r.cycles_throttled, "cycles_license2": r.cycles_license2,
                 "wall_ns": r.wall_ns} for c in sorted(sink) for r in sink[c]]
    if experiment == "datapower":
        return datapower.point_rows(sink)
    if experiment == "tstate":
        return [{"level": r.level, "nominal_duty": r.nominal_duty, "effective_duty": r.effective_duty}
                for r in sink]
    if experiment == "pperf":
        return [{"workload": k, "ratio": r} for k, r in sink]
    return [{"preset": k, "baseline_cycles": v} for k, v in sink]


COLUMNS = {
    "pstate": ["rep", "transition_us", "transition_cycles"],
    "ufs-forced": ["rep", "t_delay_us", "t_gap_us", "before_cycles", "after_cycles", "valid"],
    "ufs-loop": ["rep", "t_delay_us", "t_gap_us", "before_cycles", "after_cycles", "valid"],
    "cstate": ["cstate", "relation", "core_khz", "latency_us", "flagged"],
    "avx": ["cpu", "phase_index", "kind", "cycles_total", "cycles_throttled", "cycles_license2", "wall_ns"],
    "datapower": ["point", "popcnt_v1", "popcnt_v2", "khz", "mean_w", "stdev_w", "n_trimmed", "flagged"],
    "tstate": ["level", "nominal_duty", "effective_duty"],
    "pperf": ["workload", "ratio"],
    "chase-calibrate": ["preset", "baseline_cycles"],
}

RUNNERS = {"pstate": _pstate, "ufs-forced": _ufs_forced, "ufs-loop": _ufs_loop, "cstate": _cstate,
           "avx": _avx, "datapower": _datapower, "tstate": _tstate, "pperf": _pperf,
           "chase-calibrate": _chase_calibrate}

_GLOBAL = {"backend", "out", "json", "force", "sim_param", "platform", "power_file", "msr_path", "experiment"}


def _report_config(args, bcfg):
    opts = {k: v for k, v in sorted(vars(args).items()) if k not in _GLOBAL}
    return {"experiment": args.experiment, "options": opts, "backend": bcfg.to_dict()}


def _write(out_dir: Path, name: str, report: ExperimentReport, extra: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.json").write_bytes(export(report, "json"))
    (out_dir / f"{name}.csv").write_bytes(export(report, "csv"))
    (out_dir / f"{name}.dat").write_bytes(export(report, "gnuplot"))
    for key, obj in extra.items():
        if key == "hist":
            (out_dir / f"{name}-hist.json").write_bytes(export(obj, "json"))
            (out_dir / f"{name}-hist.dat").write_bytes(export(obj, "gnuplot"))
        elif key == "platform":
            calibrate.write_platform(out_dir / "platform.json", obj)
        else:
            (out_dir / f"{name}-{key}.json").write_text(canonical_json(obj))


def _append_pperf_to_tstate(out_dir: Path, rows):
    # pperf results ride along in the T-state report when one exists
    path = out_dir / "tstate.json"
    if not path.exists():
        return
    rep = ExperimentReport.from_json(path.read_text())
    results = dict(rep.results)
    results["pperf"] = rows
    path.write_bytes(export(dataclasses.replace(rep, results=results), "json"))


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    name = args.experiment
    try:
        bcfg = backend_config(args)
        hw = open_backend(bcfg)
    except _CONFIG_ERRORS as exc:
        print(f"eeprobe: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    sink = {} if name == "avx" else []
    out_dir = Path(args.out)
    status = EXIT_OK
    results, extra, lines = {}, {}, []
    truncated = False
    cpus = []
    with hw:
        try:
            cpus = _cpus(hw, args, single=name in ("pstate", "ufs-forced", "ufs-loop", "tstate", "pperf",
                                                   "chase-calibrate"))
            with preserve_state(hw):
                _precheck(hw, args, cpus)
                results, extra, lines = RUNNERS[name](hw, args, cpus, sink)
        except KeyboardInterrupt:
            print("eeprobe: interrupted, writing partial results", file=sys.stderr)
            truncated, status = True, EXIT_FAILED
        except _CONFIG_ERRORS as exc:
            print(f"eeprobe: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except EEProbeError as exc:
            print(f"eeprobe: {name} failed: {exc}", file=sys.stderr)
            truncated, status = True, EXIT_FAILED
        rows = _rows(name, sink, hw.tsc_khz)
        results = {**results, "columns": COLUMNS[name], "samples": rows}
        report = ExperimentReport(experiment=name, backend=hw.kind, config=_report_config(args, bcfg),
                                  topology=list(cpus), results=results, seed=args.seed,
                                  truncated=truncated)
        _write(out_dir, name, report, extra if not truncated else {})
        if name == "pperf" and not truncated:
            _append_pperf_to_tstate(out_dir, rows)
    if args.json:
        sys.stdout.write(report.to_json())
    else:
        for line in lines:
            print(line)
        print(f"wrote {out_dir / (name + '.json')}" + (" (truncated)" if truncated else ""))
    return status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
