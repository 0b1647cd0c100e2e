"""
Accuracy metrics across simulated replicates: relative deviation of the
posterior median, credible-interval coverage and width, seven-day moving
averages, and weekly period tables.

Metrics are computed on daily evaluation points ``t = k + 0.5``, averaged
across replicates per day first, then across the days of each period.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DomainError

DEFAULT_PERIODS = tuple((7 * k, 7 * (k + 1)) for k in range(6))
METRICS = ("mrd", "coverage", "width")
METRIC_TITLES = {
    "mrd": "Mean relative deviation",
    "coverage": "Percent of 95% credible intervals covering the truth",
    "width": "Mean width of 95% credible intervals",
}


def evaluation_points(start: float, end: float) -> np.ndarray:
    """Daily points ``k + 0.5`` for every whole day ``k`` in ``[start, end)``."""
    first = math.ceil(start - 1e-9)
    last = math.floor(end + 1e-9)
    return np.arange(first, last, dtype=float) + 0.5


def relative_deviation(estimate, truth) -> np.ndarray:
    """``(estimate - truth) / truth``; negative means underestimation."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise AlignmentError(f"estimate has shape {est.shape}, truth {tru.shape}")
    if np.any(~(tru > 0)):
        raise DomainError("true Ne must be strictly positive")
    return (est - tru) / tru


def coverage_and_width(lo, hi, truth) -> tuple:
    """
    :returns: ``(covered, width, finite)``: 0/1 coverage indicators, interval
        widths on the Ne scale, and a mask that is False where the width is
        infinite (those are excluded from width averages).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if not (lo.shape == hi.shape == tru.shape):
        raise AlignmentError("interval bounds and truth must have the same shape")
    covered = ((lo <= tru) & (tru <= hi)).astype(int)
    width = hi - lo
    finite = np.isfinite(width)
    return covered, width, finite


def moving_average(series, window: int = 7) -> np.ndarray:
    """
    Centred moving average; windows are truncated at the edges and NaNs are
    skipped (a window with no finite value stays NaN).
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    x = np.asarray(series, dtype=float)
    half_lo = (window - 1) // 2
    half_hi = window - 1 - half_lo
    padded = np.concatenate([np.full(half_lo, np.nan), x, np.full(half_hi, np.nan)])
    win = np.lib.stride_tricks.sliding_window_view(padded, window)
    ok = np.isfinite(win)
    num = np.where(ok, win, 0.0).sum(axis=1)
    den = ok.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[den == 0] = np.nan
    return out


@dataclass
class ReplicateMetrics:
    """Per-day metrics of one fitted replicate (NaN where the method has no estimate)."""

    points: np.ndarray
    rd: np.ndarray
    covered: np.ndarray
    width: np.ndarray

    def period_mean(self, metric: str, period) -> float:
        a, b = period
        sel = (self.points >= a) & (self.points < b)
        vals = {"mrd": self.rd, "coverage": 100.0 * self.covered, "width": self.width}[metric][sel]
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if vals.size else float("nan")


def replicate_metrics(summary, truth, points) -> ReplicateMetrics:
    """
    Compare a posterior summary with the true trajectory at ``points``.

    :param summary: object with ``grid``, ``ne_median``, ``ne_lower``, ``ne_upper``.
    :param truth: callable ``t -> Ne(t)`` or an array aligned with ``points``.
    """
    points = np.asarray(points, dtype=float)
    tru = np.asarray(truth(points) if callable(truth) else truth, dtype=float)
    if tru.shape != points.shape:
        raise AlignmentError("truth is not aligned with the evaluation points")
    grid = summary.grid
    inside = (points >= grid.boundaries[0]) & (points <= grid.boundaries[-1])
    rd = np.full(points.size, np.nan)
    cov = np.full(points.size, np.nan)
    wid = np.full(points.size, np.nan)
    if inside.any():
        cells = np.array([grid.cell_index(t) for t in points[inside]])
        rd[inside] = relative_deviation(summary.ne_median[cells], tru[inside])
        c, w, fin = coverage_and_width(summary.ne_lower[cells], summary.ne_upper[cells], tru[inside])
        cov[inside] = c
        w = np.where(fin, w, np.nan)
        wid[inside] = w
    return ReplicateMetrics(points, rd, cov, wid)


@dataclass
class MetricSeries:
    """Replicate means per day: ``mrd``, ``coverage`` (percent), ``width``; ``n`` replicates per day."""

    points: np.ndarray
    mrd: np.ndarray
    coverage: np.ndarray
    width: np.ndarray
    n: np.ndarray
    n_infinite: np.ndarray

    def smoothed(self, window: int = 7) -> "MetricSeries":
        return MetricSeries(self.points, moving_average(self.mrd, window),
                            moving_average(self.coverage, window),
                            moving_average(self.width, window), self.n, self.n_infinite)

    def get(self, metric: str) -> np.ndarray:
        return getattr(self, metric)


def aggregate(metrics: list) -> MetricSeries:
    """Average replicate metrics per evaluation day."""
    if not metrics:
        raise ValueError("no replicate metrics to aggregate")
    pts = metrics[0].points
    for m in metrics[1:]:
        if m.points.shape != pts.shape or np.any(m.points != pts):
            raise AlignmentError("replicates use different evaluation points")
    rd = np.vstack([m.rd for m in metrics])
    cov = np.vstack([m.covered for m in metrics])
    wid = np.vstack([m.width for m in metrics])
    n = np.isfinite(rd).sum(axis=0)
    n_inf = (np.isfinite(cov) & ~np.isfinite(wid)).sum(axis=0)
    with warnings.catch_warnings():
        # all-NaN days (outside a method's grid) are expected
        warnings.simplefilter("ignore", RuntimeWarning)
        return MetricSeries(pts, np.nanmean(rd, axis=0), 100.0 * np.nanmean(cov, axis=0),
                            np.nanmean(wid, axis=0), n, n_inf)


def period_table(series_by_method: dict, periods=DEFAULT_PERIODS, metric: str = "mrd") -> dict:
    """
    Mean of ``metric`` over the days of each period, per method.

    :param series_by_method: ``method -> MetricSeries``.
    :returns: ``{(a, b): {method: value}}`` in period order.
    """
    periods = [tuple(p) for p in periods]
    spans = sorted(periods)
    for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
        if a1 < b0:
            raise ValueError(f"periods [{a0},{b0}) and [{a1},{b1}) overlap")
    table = {}
    for a, b in periods:
        row = {}
        for method, s in series_by_method.items():
            sel = (s.points >= a) & (s.points < b)
            vals = s.get(metric)[sel]
            vals = vals[np.isfinite(vals)]
            row[method] = float(vals.mean()) if vals.size else float("nan")
        table[(a, b)] = row
    return table


def write_period_table(path, table: dict, methods=None, digits: int = 2) -> None:
    """CSV with one row per period (``[a,b)``) and one column per method."""
    if methods is None:
        methods = list(next(iter(table.values())).keys()) if table else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period"] + list(methods))
        for (a, b), row in table.items():
            cells = [_fmt_num(row.get(m, float("nan")), digits) for m in methods]
            w.writerow([f"[{_fmt_day(a)},{_fmt_day(b)})"] + cells)


def _fmt_day(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _fmt_num(v, digits):
    return "NA" if not math.isfinite(v) else f"{v:.{digits}f}"


def write_series_csv(path, series_by_method: dict, metric: str) -> None:
    """Per-day ``metric`` for every method (``day`` column first)."""
    methods = list(series_by_method)
    pts = series_by_method[methods[0]].points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day"] + methods)
        for i, t in enumerate(pts):
            row = [repr(float(t))]
            for m in methods:
                v = float(series_by_method[m].get(metric)[i])
                row.append(repr(v) if math.isfinite(v) else "NA")
            w.writerow(row)


# --------------------------------------------------------------------------- #
# SVG

_COLOURS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")


def svg_line_plot(path, x, series: dict, title: str = "", xlabel: str = "days before analysis",
                  ylabel: str = "", width: int = 640, height: int = 400, reference=None) -> None:
    """
    Minimal SVG line chart: one ``<polyline>`` per series, a legend entry per
    series, and an optional horizontal reference line.
    """
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.array([])])
    if reference is not None:
        finite = np.append(finite, reference)
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    ml, mr, mt, mb = 60, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return mt + (y_hi - v) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>',
           f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>']
    for v in np.linspace(y_lo, y_hi, 5):
        out.append(f'<text x="{ml - 6}" y="{py(v) + 4:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for v in np.linspace(x_lo, x_hi, 5):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 14}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    if reference is not None:
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(reference):.2f}" y2="{py(reference):.2f}" '
                   f'stroke="#999" stroke-dasharray="4 3"/>')
    for i, (name, y) in enumerate(ys.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        ok = np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" font-size="11">{_esc(name)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
