"""
Heterochronous coalescent log-likelihood on a piecewise-constant field.

Against a field that is constant per cell, the coalescent density collapses to
two per-cell vectors: the exposure ``E_d`` (integral of the coalescent factor
over the cell) and the count ``C_d`` of coalescences falling in the cell.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DomainError
from .genealogy import CoalescentSummary, Genealogy, summarize
from .grid import Grid, LatentField


@dataclass(frozen=True, eq=False)
class CoalescentSufficientStats:
    grid: Grid
    exposure: np.ndarray
    counts: np.ndarray
    log_factor_sum: float
    n_tips: int

    def to_json(self) -> str:
        return json.dumps({
            "boundaries": self.grid.boundaries.tolist(),
            "exposure": self.exposure.tolist(),
            "counts": self.counts.tolist(),
            "log_factor_sum": self.log_factor_sum,
            "n_tips": self.n_tips,
        })


def sufficient_stats(summary: CoalescentSummary | Genealogy, grid: Grid) -> CoalescentSufficientStats:
    """
    Per-cell exposure and coalescence counts.

    The cumulative integral of the coalescent factor is piecewise linear
    between events, so evaluating it at the cell boundaries gives the exact
    overlap-weighted sums.
    """
    if isinstance(summary, Genealogy):
        summary = summarize(summary)
    lo, hi = grid.boundaries[0], grid.boundaries[-1]
    t_first, t_root = summary.event_times[0], summary.root_time
    if t_first < lo or t_root > hi:
        raise DomainError(
            f"events span [{t_first}, {t_root}] but the grid covers [{lo}, {hi}]"
        )
    starts, ends, factors = summary.interval_start, summary.interval_end, summary.factors
    knots = np.concatenate([[starts[0]], ends]) if starts.size else np.array([t_first])
    cum = np.concatenate([[0.0], np.cumsum(factors * (ends - starts))])
    at_bounds = np.interp(grid.boundaries, knots, cum, left=0.0, right=cum[-1])
    exposure = np.clip(np.diff(at_bounds), 0.0, None)

    cells = grid.cell_index(summary.coalescent_times)
    counts = np.bincount(cells, minlength=grid.n_cells).astype(float)
    log_factor_sum = float(np.sum(np.log(summary.coalescent_factors)))
    return CoalescentSufficientStats(grid, exposure, counts, log_factor_sum, summary.n_tips)


def _check(stats, field):
    if isinstance(field, LatentField):
        if field.grid.boundaries.shape != stats.grid.boundaries.shape or not np.allclose(
            field.grid.boundaries, stats.grid.boundaries
        ):
            raise AlignmentError("field and sufficient statistics use different grids")
        return field.gamma
    gamma = np.asarray(field, dtype=float)
    if gamma.shape != stats.exposure.shape:
        raise AlignmentError("gamma length does not match the number of cells")
    return gamma


def coalescent_loglik(stats: CoalescentSufficientStats, field) -> float:
    """``sum_d [-C_d gamma_d - E_d exp(-gamma_d)] + sum_k log A_k``."""
    gamma = _check(stats, field)
    return float(
        -stats.counts @ gamma - stats.exposure @ np.exp(-gamma) + stats.log_factor_sum
    )


def coalescent_grad(stats: CoalescentSufficientStats, field) -> np.ndarray:
    """Gradient with respect to ``gamma``: ``-C_d + E_d exp(-gamma_d)``."""
    gamma = _check(stats, field)
    return -stats.counts + stats.exposure * np.exp(-gamma)
