"""
MCMC over ``(gamma, kappa, beta)`` and the posterior summaries it produces.
"""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..delays import DelayDistribution, reporting_probs
from ..errors import ConfigurationError, ConvergenceWarning, InitializationError
from ..genealogy import Genealogy
from ..grid import DEFAULT_CELL_WIDTH, Grid, build_grid
from . import _kernel
from .diagnostics import ess, split_rhat
from .model import Model, ModelVariant, Priors, Tag, build_model, log_posterior_terms

RHAT_THRESHOLD = 1.05
ESS_THRESHOLD = 100


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 50_000
    burn_in: int = 10_000
    thin: int = 10
    chains: int = 4
    target_accept: float = 0.57
    seed: int = 0
    n_leapfrog: int = 8
    initial_step_size: float = 0.25
    parallel: bool = True

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ConfigurationError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if self.chains < 1:
            raise ConfigurationError("chains must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.n_leapfrog < 1 or not self.initial_step_size > 0:
            raise ConfigurationError("n_leapfrog and initial_step_size must be positive")

    @property
    def n_keep(self) -> int:
        return math.ceil((self.iterations - self.burn_in) / self.thin)

    def to_dict(self) -> dict:
        return asdict(self)


def _quantiles(x, axis=0):
    lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975], axis=axis)
    return lo, med, hi


def _scalar_summary(x) -> dict:
    lo, med, hi = _quantiles(np.ravel(x))
    return {"mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)) if np.size(x) > 1 else 0.0,
            "median": float(med), "lower": float(lo), "upper": float(hi)}


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Per-cell posterior of Ne on the natural scale plus hyperparameter summaries."""

    grid: Grid
    variant: str
    ne_median: np.ndarray
    ne_lower: np.ndarray
    ne_upper: np.ndarray
    ne_mean: np.ndarray
    kappa: dict
    beta: dict
    diagnostics: dict
    flagged_cells: np.ndarray
    seed: int
    draws: dict | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics["converged"])

    def cells_for(self, t) -> np.ndarray:
        return self.grid.cell_index(t)

    def at(self, t) -> tuple:
        """``(median, lower, upper)`` of Ne at time(s) ``t``."""
        idx = self.grid.cell_index(t)
        return self.ne_median[idx], self.ne_lower[idx], self.ne_upper[idx]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_start", "cell_end", "ne_median", "ne_lo", "ne_hi"])
            for row in zip(self.grid.lower, self.grid.upper, self.ne_median, self.ne_lower,
                           self.ne_upper):
                w.writerow([repr(float(v)) for v in row])

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
            "ne_median": self.ne_median.tolist(),
            "ne_lower": self.ne_lower.tolist(),
            "ne_upper": self.ne_upper.tolist(),
            "ne_mean": self.ne_mean.tolist(),
            "kappa": self.kappa,
            "beta": self.beta,
            "flagged_cells": self.flagged_cells.tolist(),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_diagnostics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.diagnostics, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_draws(self, path) -> None:
        """Thinned draws, one row per (chain, draw), one column per parameter."""
        if self.draws is None:
            raise ConfigurationError("draws were not kept; rerun with keep_draws=True")
        gamma = self.draws["gamma"]
        chains, n, k = gamma.shape
        beta = self.draws["beta"]
        names = list(self.beta)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "draw", "kappa"] + names + [f"gamma_{d}" for d in range(k)])
            for c in range(chains):
                for i in range(n):
                    w.writerow([c, i, repr(float(self.draws["kappa"][c, i]))]
                               + [repr(float(x)) for x in beta[c, i]]
                               + [repr(float(x)) for x in gamma[c, i]])

    @classmethod
    def read_csv(cls, path, variant: str = "") -> "PosteriorSummary":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows])
        lo, hi = col("cell_start"), col("cell_end")
        width = float(hi[0] - lo[0])
        grid = Grid(start=float(lo[0]), end=float(hi[-1]), cell_width=width,
                    boundaries=np.concatenate([lo, hi[-1:]]))
        med = col("ne_median")
        return cls(grid, variant, med, col("ne_lo"), col("ne_hi"), med, {}, {}, {"converged": True},
                   np.array([], dtype=int), 0)


def initial_state(model: Model) -> tuple:
    """Skyline-style start: ``gamma = log((E + 0.5) / (C + 0.5))``, ``kappa = 1``."""
    gamma = np.log((model.coal.exposure + 0.5) / (model.coal.counts + 0.5))
    beta = model.beta_mean.copy()
    if model.sampling is not None:
        span = float(model.sampling.widths[model.sampling.include].sum())
        total = max(model.sampling.total, 1)
        beta[0] = math.log(total / span)
        beta[1] = 0.0
        beta[model.beta_fixed] = model.beta_fixed_value[model.beta_fixed]
    return gamma, 1.0, beta


def _check_initial(state, model):
    gamma, kappa, beta = state
    terms = log_posterior_terms((gamma, math.log(kappa), beta), model)
    bad = [k for k, v in terms.items() if not math.isfinite(v)]
    if bad:
        raise InitializationError(f"non-finite log-posterior at the initial state: {', '.join(bad)}")


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chain,)))


def sample_posterior(model: Model, config: McmcConfig, state=None, update_gamma=True,
                     update_kappa=True, update_beta=True) -> dict:
    """
    Run every chain and return raw draws ``{"gamma": (chains, n, K), "kappa": (chains, n),
    "beta": (chains, n, P), "info": (chains, 4)}``.

    The ``update_*`` switches hold a block at its starting value, which is
    how the conditional updates are tested in isolation.
    """
    gamma0, kappa0, beta0 = state if state is not None else initial_state(model)
    gamma0 = np.asarray(gamma0, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    _check_initial((gamma0, kappa0, beta0), model)

    K, P = model.n_cells, model.n_beta
    s = model.sampling
    use_s = s is not None
    m = s.counts if use_s else np.zeros(K)
    w = s.widths if use_s else np.zeros(K)
    inc = s.include if use_s else np.zeros(K, dtype=bool)
    off = s.offset if (use_s and s.offset is not None) else np.zeros(K)
    X = np.ascontiguousarray(s.covariates if use_s else np.zeros((K, 0)))
    beta_arr = beta0 if use_s else np.zeros(0)
    free = ~model.beta_fixed if use_s else np.zeros(0, dtype=bool)
    fp = model.field_prior
    n_keep = config.n_keep

    def one(chain):
        rng = _chain_rng(config.seed, chain)
        out_g = np.empty((n_keep, K))
        out_k = np.empty(n_keep)
        out_b = np.empty((n_keep, max(P, 0)))
        info = np.zeros(4)
        _kernel.run_chain(
            rng, gamma0, float(kappa0), beta_arr,
            model.coal.counts, model.coal.exposure, m, w, inc, off, X,
            fp.sigma_gamma_sq, fp.kappa_shape, fp.kappa_rate,
            model.beta_mean, model.beta_sd, free, use_s,
            config.iterations, config.burn_in, config.thin, config.n_leapfrog,
            config.target_accept, config.initial_step_size,
            update_gamma, update_kappa, update_beta,
            out_g, out_k, out_b, info,
        )
        return out_g, out_k, out_b, info

    chains = range(config.chains)
    workers = min(config.chains, os.cpu_count() or 1)
    if config.parallel and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, chains))
    else:
        results = [one(c) for c in chains]
    return {
        "gamma": np.stack([r[0] for r in results]),
        "kappa": np.stack([r[1] for r in results]),
        "beta": np.stack([r[2] for r in results]),
        "info": np.stack([r[3] for r in results]),
    }


def summarize_draws(model: Model, draws: dict, config: McmcConfig, keep_draws=False) -> PosteriorSummary:
    gamma = draws["gamma"]
    chains, n, K = gamma.shape
    # cells without exposure can drift far under the vague prior; they are flagged below
    with np.errstate(over="ignore", invalid="ignore"):
        ne = np.exp(gamma.reshape(-1, K))
        lo, med, hi = _quantiles(ne)
        ne_mean = ne.mean(axis=0)

    names = model.beta_names
    beta = {nm: _scalar_summary(draws["beta"][:, :, j]) for j, nm in enumerate(names)}
    kappa = _scalar_summary(draws["kappa"])

    per = {}
    for d in range(K):
        per[f"gamma_{d}"] = gamma[:, :, d]
    per["log_kappa"] = np.log(draws["kappa"])
    for j, nm in enumerate(names):
        if not model.beta_fixed[j]:
            per[nm] = draws["beta"][:, :, j]
    rhat = {k: split_rhat(v) for k, v in per.items()}
    esses = {k: ess(v) for k, v in per.items()}
    finite_r = [v for v in rhat.values() if math.isfinite(v)]
    finite_e = [v for v in esses.values() if math.isfinite(v)]
    rhat_max = max(finite_r) if finite_r else float("nan")
    ess_min = min(finite_e) if finite_e else float("nan")
    converged = bool(
        (chains < 2 or not finite_r or rhat_max <= RHAT_THRESHOLD)
        and (not finite_e or ess_min >= ESS_THRESHOLD)
    )
    info = draws["info"]
    diagnostics = {
        "rhat_max": rhat_max,
        "ess_min": ess_min,
        "rhat": rhat,
        "ess": esses,
        "step_size": info[:, 0].tolist(),
        "accept_gamma": info[:, 1].tolist(),
        "accept_beta": info[:, 2].tolist(),
        "converged": converged,
        "config": config.to_dict(),
    }
    if not converged:
        warnings.warn(
            f"MCMC diagnostics: max R-hat {rhat_max:.3f}, min ESS {ess_min:.0f} "
            f"(thresholds {RHAT_THRESHOLD}, {ESS_THRESHOLD})",
            ConvergenceWarning, stacklevel=3,
        )
    flagged = np.flatnonzero(model.coal.exposure == 0)
    return PosteriorSummary(
        grid=model.grid,
        variant=model.variant.tag.value,
        ne_median=med, ne_lower=lo, ne_upper=hi, ne_mean=ne_mean,
        kappa=kappa, beta=beta, diagnostics=diagnostics,
        flagged_cells=flagged, seed=config.seed,
        draws=draws if keep_draws else None,
    )


def inference_grid(tree: Genealogy, start: float = 0.0,
                   cell_width: float = DEFAULT_CELL_WIDTH) -> Grid:
    """Grid from the analysis time to the root."""
    return build_grid(start, tree.root_time, cell_width)


def run_mcmc(
    config: McmcConfig,
    variant: ModelVariant,
    tree: Genealogy,
    samples=None,
    delays: DelayDistribution | None = None,
    *,
    grid: Grid | None = None,
    start: float = 0.0,
    cell_width: float = DEFAULT_CELL_WIDTH,
    priors: Priors | None = None,
    window_end: float | None = None,
    keep_draws: bool = False,
) -> PosteriorSummary:
    """
    Sample the posterior of one model variant given a fixed genealogy.

    :param samples: observed sampling times (defaults to the tree's tip times).
    :param delays: delay distribution supplying reporting probabilities for
        the RP variants when the variant carries none.
    :param start: analysis time; the grid starts here and extends to the root.
    :param window_end: oldest time of the sampling window (default: oldest sample).
    """
    grid = grid or inference_grid(tree, start, cell_width)
    if variant.uses_reporting and variant.reporting_probs is None:
        if delays is None:
            raise ConfigurationError(
                f"variant {variant.tag.value} needs a delay distribution or reporting probabilities"
            )
        variant = variant.with_reporting(reporting_probs(delays, grid, grid.boundaries[0]))
    model = build_model(variant, tree, grid, samples, priors, window_end)
    draws = sample_posterior(model, config)
    return summarize_draws(model, draws, config, keep_draws=keep_draws)
