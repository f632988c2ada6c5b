import csv
import io
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eeprobe.analysis import build_histogram, export, least_squares, load_report, summarize
from eeprobe.core import ExperimentReport, Histogram
from eeprobe.errors import EmptyInput, RankDeficient

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def _nearest_rank_oracle(values, pct):
    s = sorted(values)
    return s[max(1, math.ceil(pct * len(s) / 100)) - 1]


@given(st.lists(finite, min_size=1, max_size=300))
def test_summarize_matches_oracle(values):
    s = summarize(values)
    assert s.n == len(values)
    assert s.min == min(values) and s.max == max(values)
    assert s.p50 == _nearest_rank_oracle(values, 50)
    assert s.p95 == _nearest_rank_oracle(values, 95)
    assert s.mean == pytest.approx(statistics.fmean(values), rel=1e-9, abs=1e-6)
    expected_sd = statistics.stdev(values) if len(values) > 1 else 0.0
    assert s.stdev == pytest.approx(expected_sd, rel=1e-6, abs=1e-6)


def test_summarize_small_cases():
    s = summarize([4.0])
    assert (s.n, s.stdev, s.p50, s.p95) == (1, 0.0, 4.0, 4.0)
    # nearest rank of 50 % of 4 samples is the 2nd, of 95 % the 4th
    s = summarize([3, 1, 4, 2])
    assert (s.p50, s.p95) == (2.0, 4.0)
    with pytest.raises(EmptyInput):
        summarize([])


@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=1, max_size=500),
       st.floats(0.5, 50))
def test_histogram_conserves_samples(values, width):
    h = build_histogram(values, width)
    assert sum(h.counts) == h.n == len(values)
    assert h.overflow == 0
    for v in values:
        i = int(math.floor(v / width)) - round(h.origin / width)
        assert 0 <= i < len(h.counts)


def test_histogram_fixed_bins_clamp_and_count_overflow():
    h = build_histogram([-1.0, 0.0, 24.9, 25.0, 499.0, 520.0], 25.0, num_bins=20)
    assert len(h.counts) == 20 and h.origin == 0.0
    assert h.counts[0] == 3 and h.counts[1] == 1 and h.counts[19] == 2
    assert h.overflow == 2
    with pytest.raises(EmptyInput):
        build_histogram([], 1.0)
    with pytest.raises(ValueError):
        build_histogram([1.0], 0.0)


def test_least_squares_exact_line():
    x = np.arange(10.0)
    fit = least_squares(x, 3.0 + 2.0 * x, names=["slope"])
    assert fit.intercept_w == pytest.approx(3.0, abs=1e-12)
    assert fit.coef["slope"] == pytest.approx(2.0, abs=1e-12)
    assert fit.rss == pytest.approx(0.0, abs=1e-20) and fit.n == 10


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_least_squares_residual_orthogonal_to_design(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    fit = least_squares(X, y)
    beta = np.array([fit.intercept_w] + [fit.coef[f"x{i}"] for i in range(3)])
    A = np.column_stack([np.ones(30), X])
    resid = y - A @ beta
    assert np.allclose(A.T @ resid, 0.0, atol=1e-9)
    assert fit.rss == pytest.approx(float(resid @ resid), rel=1e-9)


def test_least_squares_rejects_degenerate_designs():
    x = np.arange(5.0)
    with pytest.raises(RankDeficient):
        least_squares(np.column_stack([x, 2 * x]), x)
    with pytest.raises(RankDeficient):
        least_squares(np.ones((5, 1)), x)
    with pytest.raises(RankDeficient):
        least_squares([[1.0, 2.0]], [1.0])
    with pytest.raises(ValueError):
        least_squares([[1.0], [2.0]], [1.0])


def _report():
    rows = [{"rep": 0, "t_us": 1.5, "valid": True}, {"rep": 1, "t_us": 2.25, "valid": False}]
    return ExperimentReport("demo", "simulation", {"k": 1}, [0, 1],
                            {"columns": ["rep", "t_us", "valid"], "samples": rows}, seed=0)


def test_export_csv_and_gnuplot_tables():
    rep = _report()
    rows = list(csv.reader(io.StringIO(export(rep, "csv").decode())))
    assert rows[0] == ["rep", "t_us", "valid"]
    assert [float(r[1]) for r in rows[1:]] == [1.5, 2.25]
    dat = export(rep, "gnuplot").decode().splitlines()
    assert dat[0] == "# rep t_us valid"
    assert len(dat) == 3 and all(len(line.split()) == 3 for line in dat[1:])
    with pytest.raises(ValueError):
        export(rep, "xml")


def test_export_json_round_trips():
    rep = _report()
    blob = export(rep, "json")
    assert load_report(blob).to_json().encode() == blob


def test_export_histogram():
    h = Histogram(0.0, 25.0, (3, 0, 1), 4)
    lines = export(h, "gnuplot").decode().splitlines()
    assert lines[0] == "# bin_center count"
    assert [line.split() for line in lines[1:]] == [["12.5", "3"], ["37.5", "0"], ["62.5", "1"]]
