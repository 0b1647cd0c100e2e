import csv
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_moving_average
from phylodelay.errors import AlignmentError, DomainError
from phylodelay.evaluate import (ReplicateMetrics, aggregate, coverage_and_width, evaluation_points,
                                 moving_average, period_table, relative_deviation, replicate_metrics,
                                 svg_line_plot, write_period_table, write_series_csv)
from phylodelay.grid import build_grid


def test_relative_deviation_examples():
    assert relative_deviation([3.0], [3.0])[0] == 0.0
    assert relative_deviation([0.18 * 50], [50.0])[0] == pytest.approx(-0.82)
    rng = np.random.default_rng(0)
    e, t = rng.uniform(0.1, 10, 50), rng.uniform(0.1, 10, 50)
    np.testing.assert_allclose(relative_deviation(e, t), [(a - b) / b for a, b in zip(e, t)])
    with pytest.raises(DomainError):
        relative_deviation([1.0], [0.0])
    with pytest.raises(AlignmentError):
        relative_deviation([1.0, 2.0], [1.0])


def test_coverage_examples():
    c, w, f = coverage_and_width([0.5, 2.0, 1.0], [2.0, 3.0, 1.0], [1.0, 1.0, 1.0])
    assert list(c) == [1, 0, 1]
    assert list(w) == [1.5, 1.0, 0.0]
    assert f.all()


def test_moving_average_examples():
    assert np.all(moving_average(np.full(10, 4.2)) == 4.2)
    assert moving_average([0, 0, 0, 7, 0, 0, 0])[3] == pytest.approx(1.0)
    # truncated edge: first point averages days 0..3
    assert moving_average([4, 0, 0, 0, 0, 0, 0])[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        moving_average([1.0], 0)


@given(arrays(float, st.integers(1, 40), elements=st.one_of(st.floats(-1e3, 1e3), st.just(math.nan))),
       st.integers(1, 9))
def test_moving_average_matches_brute_force(x, window):
    np.testing.assert_allclose(moving_average(x, window), brute_moving_average(list(x), window),
                               rtol=1e-9, atol=1e-9, equal_nan=True)


@given(st.integers(1, 8), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_moving_average_preserves_mean_on_full_windows(window, blocks, seed):
    x = np.random.default_rng(seed).normal(size=window * blocks)
    ma = moving_average(x, window)
    centres = (window - 1) // 2 + window * np.arange(blocks)
    assert abs(ma[centres].mean() - x.mean()) < 1e-12


def _rm(points, rd, cov, wid):
    return ReplicateMetrics(np.asarray(points, float), np.asarray(rd, float),
                            np.asarray(cov, float), np.asarray(wid, float))


def test_single_cell_period_is_verbatim():
    s = aggregate([_rm([3.5], [-0.4], [1], [2.5])])
    for metric, want in (("mrd", -0.4), ("coverage", 100.0), ("width", 2.5)):
        assert period_table({"m": s}, [(0, 7)], metric)[(0, 7)]["m"] == pytest.approx(want)


def test_period_table_hand_aggregation():
    rng = np.random.default_rng(1)
    pts = np.arange(14) + 0.5
    reps = [_rm(pts, rng.normal(size=14), rng.integers(0, 2, 14), rng.uniform(0, 5, 14)) for _ in range(5)]
    s = aggregate(reps)
    tab = period_table({"m": s}, [(0, 7), (7, 14)], "mrd")
    for a, b in ((0, 7), (7, 14)):
        day_means = [sum(r.rd[d] for r in reps) / 5 for d in range(a, b)]
        assert tab[(a, b)]["m"] == pytest.approx(sum(day_means) / 7, abs=1e-12)
    cov = period_table({"m": s}, [(7, 14)], "coverage")[(7, 14)]["m"]
    assert cov == pytest.approx(100 * np.mean([r.covered[7:] for r in reps]))
    grand = period_table({"m": s}, [(0, 14)], "width")[(0, 14)]["m"]
    assert grand == pytest.approx(np.mean([r.width for r in reps]), abs=1e-12)
    with pytest.raises(ValueError):
        period_table({"m": s}, [(0, 7), (5, 14)])


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_aggregated_metrics_stay_in_range(n, seed):
    rng = np.random.default_rng(seed)
    pts = np.arange(10) + 0.5
    grid = build_grid(0, 10, 1.0)
    reps = []
    for _ in range(n):
        lo = rng.uniform(0, 2, 10)
        summ = SimpleNamespace(grid=grid, ne_median=lo + 0.5, ne_lower=lo, ne_upper=lo + rng.uniform(0, 2, 10))
        reps.append(replicate_metrics(summ, rng.uniform(0.1, 3, 10), pts))
    s = aggregate(reps)
    assert np.all((s.coverage >= 0) & (s.coverage <= 100))
    assert np.all(s.width >= 0)
    assert np.all(s.n == n)


def test_whole_line_intervals_flag_infinite_width():
    grid = build_grid(0, 7, 1.0)
    pts = evaluation_points(0, 7)
    summ = SimpleNamespace(grid=grid, ne_median=np.ones(7), ne_lower=np.zeros(7), ne_upper=np.full(7, np.inf))
    s = aggregate([replicate_metrics(summ, np.full(7, 2.0), pts) for _ in range(3)])
    assert np.all(s.coverage == 100.0)
    assert np.all(s.n_infinite == 3)
    assert np.all(np.isnan(s.width))


def test_days_outside_grid_are_missing():
    grid = build_grid(2, 7, 1.0)
    pts = evaluation_points(0, 7)
    summ = SimpleNamespace(grid=grid, ne_median=np.ones(5), ne_lower=np.zeros(5), ne_upper=np.full(5, 3.0))
    rm = replicate_metrics(summ, lambda t: np.ones_like(t), pts)
    assert np.isnan(rm.rd[:2]).all() and np.isfinite(rm.rd[2:]).all()
    assert rm.period_mean("coverage", (0, 7)) == 100.0
    with pytest.raises(AlignmentError):
        replicate_metrics(summ, np.ones(3), pts)


def test_evaluation_points():
    assert list(evaluation_points(0, 3)) == [0.5, 1.5, 2.5]
    assert list(evaluation_points(41, 43)) == [41.5, 42.5]


def test_table_and_series_files(tmp_path):
    pts = np.arange(14) + 0.5
    a = aggregate([_rm(pts, np.full(14, -0.5), np.ones(14), np.full(14, 2.0))])
    b = aggregate([_rm(pts, np.full(14, 0.25), np.zeros(14), np.full(14, 1.0))])
    tab = period_table({"bnpr": a, "bnpr-ps": b}, [(0, 7), (7, 14)], "mrd")
    write_period_table(tmp_path / "t.csv", tab)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows == [["period", "bnpr", "bnpr-ps"], ["[0,7)", "-0.50", "0.25"], ["[7,14)", "-0.50", "0.25"]]
    write_series_csv(tmp_path / "s.csv", {"bnpr": a.smoothed(), "bnpr-ps": b}, "coverage")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["day", "bnpr", "bnpr-ps"] and len(rows) == 15
    assert float(rows[1][1]) == 100.0 and float(rows[1][2]) == 0.0


def test_svg_plot(tmp_path):
    x = np.arange(20) + 0.5
    series = {f"m{i}": np.sin(x + i) for i in range(4)}
    series["m3"][5] = np.nan
    svg_line_plot(tmp_path / "p.svg", x, series, title="a < b", reference=0.0)
    text = (tmp_path / "p.svg").read_text()
    assert text.count("<polyline") == 4
    assert text.count("stroke-dasharray") == 1
    assert "a &lt; b" in text and text.startswith("<svg")
    import xml.etree.ElementTree as ET
    ET.fromstring(text)
