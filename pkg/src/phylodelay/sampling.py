"""
Preferential-sampling likelihood: sampling times as a Poisson process whose
log intensity is linear in log Ne, covariates, and a log reporting-probability
offset.

Sampling times enter through per-cell counts. The Poisson log-pmf is kept up
to the additive constant ``-sum_d log(m_d!)``, so reported values are
log-likelihoods up to that constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigurationError, DataError
from .grid import Grid, LatentField


def bin_samples(times, grid: Grid) -> np.ndarray:
    """Number of sampling times in each half-open cell."""
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        return np.zeros(grid.n_cells, dtype=np.int64)
    return np.bincount(grid.cell_index(times), minlength=grid.n_cells)


@dataclass(frozen=True, eq=False)
class SamplingData:
    """
    Per-cell sampling sufficient statistics.

    ``include`` marks cells entering the regression. Cells whose reporting
    probability is zero carry no intensity and are left out; by default
    ``include`` is wherever the offset is finite and the width positive.
    """

    counts: np.ndarray
    widths: np.ndarray
    covariates: np.ndarray | None = None
    offset: np.ndarray | None = None
    include: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.counts, dtype=float)
        w = np.asarray(self.widths, dtype=float)
        if m.shape != w.shape or m.ndim != 1:
            raise ConfigurationError("counts and widths must be equal-length vectors")
        if np.any(m < 0) or np.any(m != np.round(m)):
            raise DataError("sample counts must be non-negative integers")
        if np.any(w < 0):
            raise ConfigurationError("cell widths must be non-negative")
        k = m.size
        F = np.zeros((k, 0)) if self.covariates is None else np.asarray(self.covariates, float)
        if F.ndim == 1:
            F = F[:, None]
        if F.shape[0] != k:
            raise AlignmentError("covariate rows do not match the number of cells")
        o = None if self.offset is None else np.asarray(self.offset, dtype=float)
        if o is not None:
            if o.shape != m.shape:
                raise AlignmentError("offset length does not match the number of cells")
            if np.any(o > 0):
                raise DataError("log reporting probabilities must be <= 0")
        if self.include is None:
            inc = w > 0
            if o is not None:
                inc &= np.isfinite(o)
        else:
            inc = np.asarray(self.include, dtype=bool)
        if np.any(m[~inc] > 0):
            bad = np.flatnonzero((m > 0) & ~inc)
            raise DataError(
                f"samples observed in cell(s) {bad[:5].tolist()} where the reporting "
                "probability is zero or the cell lies outside the sampling window"
            )
        if not np.all(np.isfinite(F[inc])):
            raise DataError("covariates must be finite on included cells")
        if o is not None:
            o = np.where(inc, o, 0.0)
        F = np.where(inc[:, None], F, 0.0)
        for arr in (m, w, F, inc) + ((o,) if o is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "counts", m)
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "covariates", F)
        object.__setattr__(self, "offset", o)
        object.__setattr__(self, "include", inc)

    @property
    def n_cells(self) -> int:
        return self.counts.size

    @property
    def n_coefficients(self) -> int:
        return 2 + self.covariates.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def design(self, gamma) -> np.ndarray:
        """Regression design ``[1, gamma, covariates]`` (rows for every cell)."""
        gamma = np.asarray(gamma, dtype=float)
        return np.column_stack([np.ones_like(gamma), gamma, self.covariates])


def sampling_data(
    times,
    grid: Grid,
    window_end: float | None = None,
    reporting_probs=None,
    covariates=None,
) -> SamplingData:
    """
    Bin sampling times on ``grid``.

    The sampling window runs from the grid start to ``window_end`` (default:
    the oldest sampling time); cell widths are the overlap of each cell with
    that window. ``reporting_probs`` becomes the offset ``log r``.
    """
    times = np.asarray(times, dtype=float)
    counts = bin_samples(times, grid)
    if window_end is None:
        window_end = float(times.max()) if times.size else grid.boundaries[-1]
    widths = grid.overlap(grid.boundaries[0], window_end)
    if not widths.sum() > 0:
        raise DataError("the sampling window has zero length (all samples at the grid start); "
                        "pass window_end")
    # a sample sitting exactly on the window edge still needs its cell included
    widths[(counts > 0) & (widths == 0)] = np.finfo(float).tiny
    offset = None
    if reporting_probs is not None:
        r = np.asarray(reporting_probs, dtype=float)
        if np.any((r < 0) | (r > 1)):
            raise DataError("reporting probabilities must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            offset = np.log(r)
    return SamplingData(counts, widths, covariates=covariates, offset=offset)


@dataclass(frozen=True)
class SamplingCoefficients:
    """``beta = (beta_0, beta_1, beta_2, ...)`` with independent normal priors."""

    beta: np.ndarray
    prior_mean: np.ndarray | None = None
    prior_sd: np.ndarray | None = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta, dtype=float))
        mu = np.zeros_like(b) if self.prior_mean is None else np.broadcast_to(
            np.asarray(self.prior_mean, float), b.shape).copy()
        sd = np.full_like(b, 10.0) if self.prior_sd is None else np.broadcast_to(
            np.asarray(self.prior_sd, float), b.shape).copy()
        if np.any(sd <= 0):
            raise ConfigurationError("prior standard deviations must be positive")
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "prior_mean", mu)
        object.__setattr__(self, "prior_sd", sd)


def _gamma(field):
    return field.gamma if isinstance(field, LatentField) else np.asarray(field, dtype=float)


def _beta(coef):
    return coef.beta if isinstance(coef, SamplingCoefficients) else np.asarray(coef, float)


def linear_predictor(data: SamplingData, field, coef) -> np.ndarray:
    """``eta_d = o_d + beta_0 + beta_1 gamma_d + sum_j beta_j f_jd``."""
    gamma = _gamma(field)
    beta = _beta(coef)
    if gamma.shape != data.counts.shape:
        raise AlignmentError("gamma length does not match the sampling grid")
    if beta.size != data.n_coefficients:
        raise ConfigurationError(
            f"expected {data.n_coefficients} coefficients, got {beta.size}"
        )
    eta = beta[0] + beta[1] * gamma
    if data.covariates.shape[1]:
        eta = eta + data.covariates @ beta[2:]
    if data.offset is not None:
        eta = eta + data.offset
    return eta


def sampling_loglik(data: SamplingData, field, coef) -> float:
    """``sum_d [m_d eta_d - w_d exp(eta_d)]`` over included cells."""
    eta = linear_predictor(data, field, coef)
    inc = data.include
    return float(np.sum(data.counts[inc] * eta[inc] - data.widths[inc] * np.exp(eta[inc])))


def sampling_grad(data: SamplingData, field, coef) -> tuple:
    """Gradients ``(d/d gamma, d/d beta)`` of :func:`sampling_loglik`."""
    eta = linear_predictor(data, field, coef)
    beta = _beta(coef)
    resid = np.where(data.include, data.counts - data.widths * np.exp(eta), 0.0)
    grad_gamma = beta[1] * resid
    grad_beta = data.design(_gamma(field)).T @ resid
    return grad_gamma, grad_beta
