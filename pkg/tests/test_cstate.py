import numpy as np
import pytest

from eeprobe import cstate
from eeprobe.errors import ConfigError, CStateUnavailable, InvalidCPU


def _c6_local_oracle(khz, nominal=(3_000_000, 33.0), minimum=(1_200_000, 42.0)):
    # latency = a + b / f through the two reference points
    (f1, y1), (f2, y2) = nominal, minimum
    b = (y2 - y1) / (1e6 / f2 - 1e6 / f1)
    a = y1 - b * 1e6 / f1
    return a + b * 1e6 / khz


def test_choose_pair_relations(sim):
    caller, callee, busy = cstate.choose_pair(sim, "local")
    assert sim.package_of(caller) == sim.package_of(callee) and caller != callee and busy == []
    caller, callee, busy = cstate.choose_pair(sim, "remote_idle")
    assert sim.package_of(caller) != sim.package_of(callee) and busy == []
    caller, callee, busy = cstate.choose_pair(sim, "remote_active")
    assert len(busy) == 1 and sim.package_of(busy[0]) == sim.package_of(callee) != sim.package_of(caller)
    # hyperthread siblings share a core, so they never form a pair
    assert sim.core_of(caller) != sim.core_of(callee)


def test_choose_pair_needs_enough_cpus(sim):
    one_pkg = [c for c in sim.cpus() if sim.package_of(c) == 0]
    with pytest.raises(InvalidCPU):
        cstate.choose_pair(sim, "remote_idle", one_pkg)
    with pytest.raises(InvalidCPU):
        cstate.choose_pair(sim, "local", one_pkg[:1])
    with pytest.raises(ConfigError):
        cstate.choose_pair(sim, "sideways")


def test_restrict_idle_states_disables_deeper_only(sim):
    cstate.restrict_idle_states(sim, 3, "C1E")
    names = sim.idle_states(3)
    depth = names.index("C1E")
    for i, n in enumerate(names):
        assert sim.idle_state_disabled(3, n) == (i > depth)
    cstate.restrict_idle_states(sim, 3, "C6")
    assert not any(sim.idle_state_disabled(3, n) for n in names)


@pytest.mark.parametrize("khz", cstate.DEFAULT_SWEEP_KHZ)
def test_local_c6_latency_follows_inverse_frequency(sim, khz):
    samples = cstate.measure_wakeup(sim, "C6", "local", khz, reps=60, sleep_s=0.01)
    med = float(np.median([s.latency_us for s in samples]))
    assert med == pytest.approx(_c6_local_oracle(khz), abs=sim.p.wake_jitter_us)
    assert not any(s.flagged for s in samples)


def test_states_order_by_depth(sim):
    med = {cs: np.median([s.latency_us for s in cstate.measure_wakeup(sim, cs, "local", 2_400_000, 30, 0.01)])
           for cs in cstate.CSTATES}
    assert med["C0poll"] < med["C1"] < med["C1E"] < med["C6"]


def test_remote_active_matches_local(sim):
    local = np.median([s.latency_us for s in cstate.measure_wakeup(sim, "C6", "local", 3_000_000, 50, 0.01)])
    active = np.median([s.latency_us for s in
                        cstate.measure_wakeup(sim, "C6", "remote_active", 3_000_000, 50, 0.01)])
    assert active == pytest.approx(local, abs=2 * sim.p.wake_jitter_us)
    assert not sim.busy_cpus()


def test_demoted_wakeups_are_flagged(make_sim):
    hw = make_sim(cstate_demotion_prob=1.0)
    samples = cstate.measure_wakeup(hw, "C6", "local", 3_000_000, reps=10, sleep_s=0.01)
    assert all(s.flagged for s in samples)
    assert all(s.usage_delta == {"C1": 1} for s in samples)


def test_unknown_cstate(sim):
    with pytest.raises(CStateUnavailable):
        cstate.measure_wakeup(sim, "C7", "local", 3_000_000, reps=1)
    with pytest.raises(ValueError):
        cstate.WakeupSample("C6", "local", 3_000_000, 0.0)


def test_sweep_cells_and_baseline(sim):
    sink = []
    out = cstate.sweep(sim, ("C1", "C6"), (1_200_000, 3_000_000), ("local",), reps=7, sleep_s=0.01, sink=sink)
    assert out["samples"] is sink and len(sink) == 2 * 2 * 7
    cells = cstate.cell_stats(sink)
    assert set(cells) == {("local", c, k) for c in ("C1", "C6") for k in (1_200_000, 3_000_000)}
    assert out["baseline_us"]["local"] == pytest.approx(sim.p.wake_signal_us, abs=sim.p.wake_jitter_us)
