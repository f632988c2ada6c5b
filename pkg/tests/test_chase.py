import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from eeprobe.chase import (PRESETS, average_access_cycles, build_chase, build_preset, is_single_cycle,
                           preset_lines, run_chase, sattolo_cycle)
from eeprobe.core import LatencyTrace
from eeprobe.errors import EmptyWindow, RangeViolation


@settings(max_examples=200)
@given(st.integers(1, 3000), st.integers(0, 2**32 - 1))
def test_sattolo_is_single_cycle(n, seed):
    perm = sattolo_cycle(n, np.random.default_rng(seed))
    assert sorted(perm.tolist()) == list(range(n))
    assert is_single_cycle(perm)


def test_sattolo_uniform_over_cyclic_permutations():
    # (n-1)! = 6 distinct 4-cycles, each should be equally likely
    rng = np.random.default_rng(11)
    counts = {}
    for _ in range(12_000):
        key = tuple(sattolo_cycle(4, rng).tolist())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    assert all(is_single_cycle(k) for k in counts)
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_is_single_cycle_rejects_split_permutations():
    assert not is_single_cycle([1, 0, 3, 2])
    assert not is_single_cycle([0, 1])
    assert is_single_cycle([0])
    for perm in itertools.permutations(range(4)):
        lengths = []
        seen = set()
        for s in range(4):
            if s in seen:
                continue
            i, k = s, 0
            while i not in seen:
                seen.add(i)
                i = perm[i]
                k += 1
            lengths.append(k)
        assert is_single_cycle(perm) == (lengths == [4])


def test_memory_holds_byte_offset_of_next_slot():
    buf = build_chase(16, 128, seed=3)
    mem = buf.memory()
    words = 128 // 8
    assert mem.size == 16 * words
    for i in range(16):
        assert mem[i * words] == buf.permutation[i] * 128
        assert not mem[i * words + 1:(i + 1) * words].any()
    lap = buf.traverse()
    assert sorted(lap) == list(range(16)) and lap[-1] == 0
    assert buf.traverse(start=5, hops=1) == [int(buf.permutation[5])]


def test_build_is_seeded_and_cached():
    a = build_chase(100, seed=1)
    assert build_chase(100, seed=1) is a
    assert build_chase(100, seed=2) != a
    assert a.footprint_bytes == 6400
    with pytest.raises(ValueError):
        a.permutation[0] = 1


@pytest.mark.parametrize("lines,stride", [(0, 64), (10, 32), (10, 68)])
def test_build_rejects_bad_geometry(lines, stride):
    with pytest.raises(RangeViolation):
        build_chase(lines, stride)


def test_presets_and_platform_override():
    assert preset_lines("l1") == PRESETS["l1"]
    assert preset_lines("l1") * 64 == 16 * 1024
    assert preset_lines("dram") * 64 == 64 * 1024 * 1024
    assert preset_lines("llc", {"chase_presets": {"llc": 1000}}) == 1000
    assert build_preset("llc", platform={"chase_presets": {"llc": 1000}}).num_lines == 1000
    with pytest.raises(RangeViolation):
        preset_lines("l4")


def test_run_chase_on_sim_follows_the_latency_model(sim):
    cpu = 0
    core = sim.core_khz(cpu)
    means = {}
    for name in ("l1", "llc", "dram"):
        tr = run_chase(build_preset(name), 2048, sim, cpu)
        assert len(tr) == 2048
        means[name] = average_access_cycles(tr)
        # the uncore control loop reacts to the chase, so read its clock afterwards
        expected = sim.access_latency(name, core, sim.uncore_khz(0))
        assert means[name] == pytest.approx(expected, rel=0.02)
    assert means["l1"] < means["llc"] < means["dram"]


def test_run_chase_zero_and_negative(sim):
    assert len(run_chase(build_preset("l1"), 0, sim, 0)) == 0
    with pytest.raises(RangeViolation):
        run_chase(build_preset("l1"), -1, sim, 0)


def test_average_access_window():
    tr = LatencyTrace([10, 20, 40], [10, 10, 20], 1000)
    assert average_access_cycles(tr) == pytest.approx(40 / 3)
    assert average_access_cycles(tr, 2) == 20.0
    for lo, hi in ((2, 2), (0, 4), (-1, 2)):
        with pytest.raises(EmptyWindow):
            average_access_cycles(tr, lo, hi)
