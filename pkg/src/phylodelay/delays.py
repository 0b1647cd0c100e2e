"""
Reporting-delay distributions and the reporting probabilities they imply on
the inference grid.
"""
from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, DataError
from .grid import Grid

DEFAULT_WINDOW_DAYS = 30


@dataclass(frozen=True, eq=False)
class DelayDistribution:
    """Empirical distribution of delays (days) between collection and report."""

    delays: np.ndarray

    def __post_init__(self):
        d = np.sort(np.asarray(self.delays, dtype=float).ravel())
        if d.size == 0:
            raise ConfigurationError("a delay distribution needs at least one delay")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DataError("delays must be finite and non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "delays", d)

    @property
    def n(self) -> int:
        return self.delays.size

    def ecdf(self, x):
        """Right-continuous ``F(x) = #{delays <= x} / n``."""
        out = np.searchsorted(self.delays, np.asarray(x, dtype=float), side="right") / self.n
        return float(out) if np.ndim(out) == 0 else out

    __call__ = ecdf

    def mean_ecdf(self, a: float, b: float) -> float:
        """Exact average of ``F`` over ``[a, b]``."""
        if b <= a:
            return self.ecdf(a)
        mean = np.sum(np.clip(b - np.maximum(self.delays, a), 0.0, None)) / (self.n * (b - a))
        # an average of a CDF; clip the rounding excess
        return float(min(mean, 1.0))


def fit_ecdf(records) -> DelayDistribution:
    """
    Delay distribution from ``(collection_date, report_date)`` pairs.

    Dates may be ``datetime.date``/``datetime`` objects, ISO strings, or plain
    numbers of days.
    """
    records = list(records)
    if not records:
        raise ConfigurationError("no delay records supplied")
    delays = np.array([_days_between(c, r) for c, r in records], dtype=float)
    bad = np.flatnonzero(delays < 0)
    if bad.size:
        shown = [records[i] for i in bad[:5]]
        raise DataError(f"{bad.size} record(s) reported before collection: {shown}")
    return DelayDistribution(delays)


def _as_date(value):
    if isinstance(value, _dt.datetime):
        return value
    if isinstance(value, _dt.date):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)):
        return float(value)
    try:
        return _dt.date.fromisoformat(str(value).strip())
    except ValueError:
        raise DataError(f"cannot parse date {value!r}") from None


def _days_between(collected, reported) -> float:
    c, r = _as_date(collected), _as_date(reported)
    if isinstance(c, float) or isinstance(r, float):
        return float(r) - float(c)
    delta = r - c
    return delta.total_seconds() / 86400.0


def recent_records(records, analysis_date, window_days: float = DEFAULT_WINDOW_DAYS):
    """
    Records whose report date falls within ``window_days`` before ``analysis_date``.

    Filtering on the report date keeps long delays in the sample; filtering
    on collection date would censor every delay longer than the window.
    """
    end = _as_date(analysis_date)
    out = []
    for rec in records:
        lag = _days_between(rec[1], end)
        if 0 <= lag <= window_days:
            out.append(rec)
    return out


def reporting_probs(
    dist: DelayDistribution,
    grid: Grid,
    analysis_time: float | None = None,
    method: str = "midpoint",
) -> np.ndarray:
    """
    Reporting probability per grid cell.

    A sample collected ``tau`` days before the analysis has been reported
    with probability ``F(tau)``. ``method`` is ``"midpoint"`` (evaluate at the
    cell midpoint) or ``"average"`` (exact mean of ``F`` across the cell).
    """
    if analysis_time is None:
        analysis_time = grid.boundaries[0]
    if not math.isclose(analysis_time, grid.boundaries[0], abs_tol=1e-9):
        raise ConfigurationError("the grid must start at the analysis time")
    if method == "midpoint":
        return np.asarray(dist.ecdf(grid.midpoints - analysis_time), dtype=float)
    if method == "average":
        return np.array([
            dist.mean_ecdf(a - analysis_time, b - analysis_time)
            for a, b in zip(grid.lower, grid.upper)
        ])
    raise ConfigurationError(f"unknown reporting-probability method {method!r}")


def quantile(dist: DelayDistribution, q: float) -> float:
    """Lower empirical quantile: the smallest ``x`` with ``F(x) >= q``."""
    if not 0.0 <= q <= 1.0:
        raise ConfigurationError(f"quantile level must lie in [0, 1], got {q}")
    k = max(math.ceil(q * dist.n - 1e-12), 1)
    return float(dist.delays[k - 1])


# --------------------------------------------------------------------------- #
# CSV formats

def read_delay_records(path) -> list:
    """Read ``label,collection_date,report_date`` rows as ``(collection, report)`` pairs."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"collection_date", "report_date"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns label,collection_date,report_date")
        return [(row["collection_date"], row["report_date"]) for row in reader]


def write_delay_records(path, records: Iterable, labels=None) -> None:
    records = list(records)
    labels = labels or [f"s{i}" for i in range(len(records))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "collection_date", "report_date"])
        for lab, (c, r) in zip(labels, records):
            w.writerow([lab, _fmt(c), _fmt(r)])


def _fmt(value):
    if isinstance(value, (_dt.date, _dt.datetime)):
        return value.isoformat()
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_rcurve(path, grid: Grid, r) -> None:
    """Write ``cell_start,cell_end,reporting_prob``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_start", "cell_end", "reporting_prob"])
        for a, b, p in zip(grid.lower, grid.upper, r):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(p))])


def read_rcurve(path) -> tuple:
    """Read an r-curve CSV into ``(cell_start, cell_end, reporting_prob)`` arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty reporting-probability curve")
    cols = [np.array([float(r[k]) for r in rows]) for k in ("cell_start", "cell_end", "reporting_prob")]
    return tuple(cols)


def rcurve_on_grid(path, grid: Grid) -> np.ndarray:
    """Reporting probabilities from an r-curve file, looked up at cell midpoints."""
    lo, hi, r = read_rcurve(path)
    mids = grid.midpoints
    idx = np.searchsorted(hi, mids, side="left")
    out = np.ones(grid.n_cells)
    inside = idx < hi.size
    out[inside] = r[idx[inside]]
    if np.any(mids[inside] < lo[idx[inside]]):
        raise DataError(f"{path}: r-curve has gaps relative to the inference grid")
    return out
