import pytest
from hypothesis import given
from hypothesis import strategies as st

from eeprobe.errors import ParseError, RangeViolation, SourceUnavailable
from eeprobe.hwif import registers as regs
from eeprobe.hwif.power import FilePowerSource, parse_power_line


@given(st.integers(0, 0x7F), st.integers(0, 0x7F))
def test_uncore_ratio_round_trip(lo, hi):
    assert regs.decode_uncore_ratio_limit(regs.encode_uncore_ratio_limit(lo, hi)) == (lo, hi)


def test_uncore_ratio_layout():
    # 1.2 GHz min, 2.4 GHz max
    assert regs.encode_uncore_ratio_limit(12, 24) == 0x0C18
    with pytest.raises(RangeViolation):
        regs.encode_uncore_ratio_limit(0x80, 1)


@given(st.integers(0, regs.CLOCK_MOD_LEVELS - 1))
def test_clock_modulation_round_trip(level):
    raw = regs.encode_clock_modulation(level)
    assert regs.decode_clock_modulation(raw) == level
    assert bool(raw & regs.CLOCK_MOD_ENABLE) == (level != 0)


def test_clock_modulation_bounds_and_duty():
    for bad in (-1, 16):
        with pytest.raises(RangeViolation):
            regs.encode_clock_modulation(bad)
    assert regs.decode_clock_modulation(0x0F) == 0  # duty bits without the enable bit
    assert regs.nominal_duty(0) == 1.0 and regs.nominal_duty(4) == 0.25


def test_parse_power_line():
    s = parse_power_line(" 1500,99.25\n")
    assert (s.t_ns, s.watts, s.source) == (1500, 99.25, "external_file")
    for bad in ("1500", "a,1", "1,b", "1,2,3", "5,-1"):
        with pytest.raises(ParseError):
            parse_power_line(bad)


def test_file_power_source(tmp_path):
    path = tmp_path / "meter.log"
    path.write_text("# header\n\n10,1.5\n20,2.5\n")
    src = FilePowerSource(path)
    assert [src.sample().watts for _ in range(2)] == [1.5, 2.5]
    src.close()
    with pytest.raises(SourceUnavailable):
        FilePowerSource(tmp_path / "missing.log")


def test_file_power_source_times_out_waiting(tmp_path):
    path = tmp_path / "meter.log"
    path.write_text("10,1.5\n20,")  # second record is still being written
    src = FilePowerSource(path, wait_s=0.05)
    assert src.sample().watts == 1.5
    with pytest.raises(SourceUnavailable):
        src.sample()
    src.close()
