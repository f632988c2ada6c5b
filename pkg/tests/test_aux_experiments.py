import json

import pytest

from eeprobe import aux_experiments as aux
from eeprobe import calibrate
from eeprobe.core import SCHEMA_VERSION
from eeprobe.errors import ConfigError
from eeprobe.hwif.registers import CLOCK_MOD_LEVELS, nominal_duty


def test_tstate_sweep_on_sim(sim):
    res = aux.measure_tstate_sweep(sim, duration_s=0.05)
    assert [r.level for r in res] == list(range(1, CLOCK_MOD_LEVELS))
    by_level = {r.level: r for r in res}
    for level in sim.p.tstate_unimplemented_levels:
        assert not by_level[level].implemented
    for r in res:
        assert r.nominal_duty == nominal_duty(r.level)
        if r.implemented:
            # modulation skips slightly more cycles than the nominal duty promises
            assert r.effective_duty == pytest.approx(r.nominal_duty - sim.p.tstate_excess_skip, abs=1e-3)
    assert aux.is_monotone(res)
    assert sim.read_msr(0, 0x19A) == 0


def test_is_monotone_ignores_unimplemented_levels():
    mk = aux.TstateResult
    assert aux.is_monotone([mk(1, 1 / 16, 1.0), mk(2, 0.125, 0.1), mk(3, 0.1875, 0.16)])
    assert not aux.is_monotone([mk(2, 0.125, 0.2), mk(3, 0.1875, 0.16)])
    assert mk(0, 1.0, 1.0).implemented
    with pytest.raises(ValueError):
        mk(4, 0.25, 0.0)


def test_pperf_counts_stalls_on_the_reference_platform(sim):
    assert aux.measure_pperf_ratio("stall_chase", 0.01, sim) == pytest.approx(1.0)
    assert aux.measure_pperf_ratio("compute", 0.01, sim) == pytest.approx(1.0)


def test_pperf_with_a_stall_aware_counter(make_sim):
    hw = make_sim(pperf_counts_stalled_cycles=False)
    stall = aux.measure_pperf_ratio("stall_chase", 0.01, hw)
    assert stall == pytest.approx(hw.p.stall_productive_fraction, rel=0.05)
    assert aux.measure_pperf_ratio("compute", 0.01, hw) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        aux.measure_pperf_ratio("idle", 0.01, hw)


def test_calibrate_and_platform_file(sim, tmp_path):
    plat = calibrate.calibrate(sim)
    assert plat["schema"] == SCHEMA_VERSION and plat["tsc_khz"] == sim.tsc_khz
    assert plat["timer_overhead_cycles"] == sim.p.timer_overhead_cycles
    base = plat["chase_baseline_cycles"]
    assert base["l1"] < base["llc"] < base["dram"]
    assert len(plat["topology"]) == sim.p.num_cpus
    path = tmp_path / "platform.json"
    calibrate.write_platform(path, plat)
    assert calibrate.load_platform(path) == json.loads(path.read_text())
    path.write_text(json.dumps({"schema": 99}))
    with pytest.raises(ConfigError):
        calibrate.load_platform(path)
    with pytest.raises(ConfigError):
        calibrate.load_platform(tmp_path / "nope.json")
