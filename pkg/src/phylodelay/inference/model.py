"""
Model variants and the reduced log-posterior over ``(gamma, log kappa, beta)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import gammaln

from ..coalescent import CoalescentSufficientStats, coalescent_grad, coalescent_loglik, sufficient_stats
from ..errors import ConfigurationError
from ..genealogy import Genealogy, summarize
from ..grid import FieldPrior, Grid, log_prior_gamma, log_prior_gamma_grad
from ..sampling import SamplingData, sampling_data, sampling_grad, sampling_loglik

DEFAULT_BETA_SD = 10.0
DEFAULT_RP_PRIOR_SD = 0.1


class Tag(str, enum.Enum):
    BNPR = "bnpr"
    BNPR_PS = "bnpr-ps"
    BNPR_PS_RP_OFFSET = "bnpr-ps-rp-offset"
    BNPR_PS_RP_COVARIATE = "bnpr-ps-rp-covariate"


@dataclass(frozen=True, eq=False)
class ModelVariant:
    """
    Which likelihood terms enter the posterior.

    ``reporting_probs`` may be left empty and filled from a delay
    distribution once the inference grid is known. ``fixed_coefficients``
    pins sampling coefficients (by index into ``beta``) at given values.
    """

    tag: Tag
    reporting_probs: np.ndarray | None = None
    covariates: np.ndarray | None = None
    rp_prior_sd: float = DEFAULT_RP_PRIOR_SD
    fixed_coefficients: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tag", Tag(self.tag))
        if not self.rp_prior_sd > 0:
            raise ConfigurationError("rp_prior_sd must be positive")

    @property
    def uses_sampling(self) -> bool:
        return self.tag is not Tag.BNPR

    @property
    def uses_reporting(self) -> bool:
        return self.tag in (Tag.BNPR_PS_RP_OFFSET, Tag.BNPR_PS_RP_COVARIATE)

    def with_reporting(self, r) -> "ModelVariant":
        return ModelVariant(self.tag, np.asarray(r, dtype=float), self.covariates,
                            self.rp_prior_sd, dict(self.fixed_coefficients))


def fixed_coefficient_variant(prior_sd: float = DEFAULT_RP_PRIOR_SD, reporting_probs=None,
                              covariates=None) -> ModelVariant:
    """Reporting probabilities as a covariate ``log r`` whose coefficient has prior N(1, prior_sd^2)."""
    if not prior_sd > 0:
        raise ConfigurationError("prior_sd must be positive")
    return ModelVariant(Tag.BNPR_PS_RP_COVARIATE, reporting_probs, covariates, prior_sd)


@dataclass(frozen=True)
class Priors:
    field: FieldPrior = field(default_factory=FieldPrior)
    beta_mean: float = 0.0
    beta_sd: float = DEFAULT_BETA_SD


@dataclass(frozen=True, eq=False)
class Model:
    """Everything the posterior needs, precomputed once per (tree, grid, variant)."""

    variant: ModelVariant
    grid: Grid
    coal: CoalescentSufficientStats
    sampling: SamplingData | None
    field_prior: FieldPrior
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    beta_fixed: np.ndarray
    beta_fixed_value: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def n_beta(self) -> int:
        return 0 if self.sampling is None else self.sampling.n_coefficients

    @property
    def beta_names(self) -> list:
        if self.sampling is None:
            return []
        names = ["beta0", "beta1"]
        q = self.sampling.covariates.shape[1]
        extra = q - (1 if self.variant.tag is Tag.BNPR_PS_RP_COVARIATE else 0)
        names += [f"beta{j + 2}" for j in range(extra)]
        if self.variant.tag is Tag.BNPR_PS_RP_COVARIATE:
            names.append("beta_rp")
        return names


def build_model(variant: ModelVariant, tree: Genealogy, grid: Grid, sampling_times=None,
                priors: Priors | None = None, window_end: float | None = None) -> Model:
    priors = priors or Priors()
    coal = sufficient_stats(summarize(tree, origin=grid.boundaries[0]), grid)
    data = None
    if variant.uses_sampling:
        if sampling_times is None:
            sampling_times = tree.tip_times
        r = variant.reporting_probs
        if variant.uses_reporting and r is None:
            raise ConfigurationError(f"variant {variant.tag.value} needs reporting probabilities")
        if r is not None and np.shape(r) != (grid.n_cells,):
            raise ConfigurationError("reporting probabilities do not match the grid")
        if variant.tag is Tag.BNPR_PS_RP_COVARIATE:
            base = sampling_data(sampling_times, grid, window_end, reporting_probs=r)
            logr = np.where(base.include, base.offset, 0.0)
            F = logr[:, None]
            if variant.covariates is not None:
                F = np.column_stack([np.asarray(variant.covariates, float).reshape(grid.n_cells, -1), logr])
            data = SamplingData(base.counts, base.widths, covariates=F, include=base.include)
        else:
            offset_r = r if variant.tag is Tag.BNPR_PS_RP_OFFSET else None
            data = sampling_data(sampling_times, grid, window_end, reporting_probs=offset_r,
                                 covariates=variant.covariates)
    p = 0 if data is None else data.n_coefficients
    mean = np.full(p, float(priors.beta_mean))
    sd = np.full(p, float(priors.beta_sd))
    if variant.tag is Tag.BNPR_PS_RP_COVARIATE:
        mean[-1], sd[-1] = 1.0, variant.rp_prior_sd
    fixed = np.zeros(p, dtype=bool)
    fixed_value = np.zeros(p)
    for k, v in dict(variant.fixed_coefficients).items():
        if not 0 <= k < p:
            raise ConfigurationError(f"cannot fix coefficient {k}: model has {p}")
        fixed[k], fixed_value[k] = True, float(v)
    return Model(variant, grid, coal, data, priors.field, mean, sd, fixed, fixed_value)


def _unpack(state):
    if isinstance(state, Mapping):
        return (np.asarray(state["gamma"], float), float(state["log_kappa"]),
                np.asarray(state.get("beta", ()), float))
    gamma, log_kappa, beta = state
    return np.asarray(gamma, float), float(log_kappa), np.asarray(beta, float)


def log_kappa_prior(log_kappa: float, prior: FieldPrior) -> float:
    """Gamma(shape, rate) log density of ``kappa`` plus the log-Jacobian of ``log kappa``."""
    a, b = prior.kappa_shape, prior.kappa_rate
    kappa = math.exp(log_kappa)
    return float(a * math.log(b) - gammaln(a) + (a - 1) * log_kappa - b * kappa + log_kappa)


def log_beta_prior(beta, mean, sd) -> float:
    z = (beta - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * math.log(2 * math.pi)))


def log_posterior_terms(state, model: Model) -> dict:
    """Individual log-density terms of the unnormalized posterior."""
    gamma, log_kappa, beta = _unpack(state)
    kappa = math.exp(log_kappa)
    terms = {"coalescent": coalescent_loglik(model.coal, gamma)}
    if model.sampling is not None:
        terms["sampling"] = sampling_loglik(model.sampling, gamma, beta)
        terms["beta_prior"] = log_beta_prior(beta, model.beta_mean, model.beta_sd)
    terms["gamma_prior"] = log_prior_gamma(gamma, kappa, model.field_prior)
    terms["kappa_prior"] = log_kappa_prior(log_kappa, model.field_prior)
    return terms


def log_posterior(state, model: Model) -> float:
    """
    Unnormalized log-posterior at ``(gamma, log kappa, beta)``.

    BNPR ignores ``beta`` entirely. Sampling terms omit the count factorials.
    """
    return float(sum(log_posterior_terms(state, model).values()))


def log_posterior_grad(state, model: Model) -> tuple:
    """Gradient of :func:`log_posterior` as ``(d gamma, d log kappa, d beta)``."""
    gamma, log_kappa, beta = _unpack(state)
    kappa = math.exp(log_kappa)
    prior = model.field_prior
    g_gamma = coalescent_grad(model.coal, gamma) + log_prior_gamma_grad(gamma, kappa, prior)
    g_beta = np.zeros(model.n_beta)
    if model.sampling is not None:
        sg, sb = sampling_grad(model.sampling, gamma, beta)
        g_gamma = g_gamma + sg
        g_beta = sb - (beta - model.beta_mean) / model.beta_sd ** 2
    inc = np.diff(gamma)
    d_kappa = 0.5 * inc.size / kappa - 0.5 * float(inc @ inc)
    g_log_kappa = d_kappa * kappa + (prior.kappa_shape - 1) - prior.kappa_rate * kappa + 1.0
    return g_gamma, float(g_log_kappa), g_beta
