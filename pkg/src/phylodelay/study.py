"""
Replicate study: simulate datasets, fit each method in real time (and the
truncated baseline), and reduce every fit to per-day metrics.

Only metrics are kept per replicate, so a 100-replicate study stays small
in memory.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .delays import DelayDistribution, quantile, reporting_probs
from .errors import ConvergenceWarning, PhylodelayError
from .evaluate import ReplicateMetrics, aggregate, evaluation_points, replicate_metrics
from .inference import McmcConfig, ModelVariant, Tag, run_mcmc
from .inference.mcmc import inference_grid
from .simulate import SimConfig, TrajectorySpec, simulate_replicate, truncate_dataset

METHODS = ("bnpr", "bnpr-ps", "bnpr-ps-rp-offset", "bnpr-ps-rp-covariate", "bnpr-truncated")
METHOD_LABELS = {
    "bnpr": "BNPR",
    "bnpr-ps": "BNPR PS",
    "bnpr-ps-rp-offset": "BNPR PS RP offset",
    "bnpr-ps-rp-covariate": "BNPR PS RP covariate",
    "bnpr-truncated": "BNPR truncated",
}


def study_mcmc_config(seed: int = 0) -> McmcConfig:
    """Sampler settings used for the replicate studies (about 2 s per fit)."""
    return McmcConfig(iterations=20000, burn_in=5000, thin=5, chains=2, seed=seed,
                      parallel=False)


@dataclass
class StudyResult:
    spec: TrajectorySpec
    methods: tuple
    points: np.ndarray
    metrics: dict = field(default_factory=dict)         # method -> [ReplicateMetrics]
    converged: dict = field(default_factory=dict)       # method -> [bool]
    failures: dict = field(default_factory=dict)        # method -> [(replicate, message)]
    truncation_days: float = 0.0
    seeds: list = field(default_factory=list)

    def series(self, method: str):
        return aggregate(self.metrics[method])

    def all_series(self) -> dict:
        return {m: self.series(m) for m in self.methods if self.metrics.get(m)}

    def replicate_period_means(self, method: str, metric: str, period) -> np.ndarray:
        return np.array([rm.period_mean(metric, period) for rm in self.metrics[method]])


def fit_method(method: str, rep, delays: DelayDistribution, mcmc: McmcConfig,
               truncation_days: float, cell_width: float = 2.0):
    """Fit one method to one replicate; returns the posterior summary."""
    if method == "bnpr-truncated":
        tree, times = truncate_dataset(rep.observed_tree, rep.observed_times, truncation_days)
        grid = inference_grid(tree, start=truncation_days, cell_width=cell_width)
        return run_mcmc(mcmc, ModelVariant(Tag.BNPR), tree, grid=grid)
    tree, times = rep.observed_tree, rep.observed_times
    grid = inference_grid(tree, start=0.0, cell_width=cell_width)
    tag = Tag(method)
    variant = ModelVariant(tag)
    if variant.uses_reporting:
        variant = variant.with_reporting(reporting_probs(delays, grid))
    return run_mcmc(mcmc, variant, tree, times, grid=grid)


def _one_replicate(i, seed, spec, sim, methods, mcmc_seed, truncation_days, points, cell_width):
    rep = simulate_replicate(spec, sim, seed=seed)
    out = {}
    for method in methods:
        mcmc = study_mcmc_config(seed=mcmc_seed)
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                summ = fit_method(method, rep, sim.delays, mcmc, truncation_days, cell_width)
            conv = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
            out[method] = (replicate_metrics(summ, spec, points), conv, None)
        except PhylodelayError as exc:
            out[method] = (None, False, f"{type(exc).__name__}: {exc}")
    return i, out


def run_study(spec: TrajectorySpec, n_replicates: int, sim: SimConfig, methods=METHODS,
              seed: int = 0, truncation_days: float | None = None, jobs: int = 1,
              cell_width: float = 2.0, progress=None) -> StudyResult:
    """
    Simulate ``n_replicates`` datasets and fit every method to each.

    :param truncation_days: cutoff for the truncated baseline; defaults to the
        90th percentile of the delay distribution.
    :param jobs: worker processes (joblib); 1 runs in-process.
    :param progress: optional callable ``(done, total)``.
    """
    if sim.delays is None:
        raise ValueError("the study needs a delay distribution in SimConfig.delays")
    if truncation_days is None:
        truncation_days = quantile(sim.delays, 0.9)
    children = np.random.SeedSequence(seed).spawn(n_replicates)
    seeds = [int(c.generate_state(1)[0]) for c in children]
    points = evaluation_points(spec.span[0], spec.span[1])
    methods = tuple(methods)
    args = [(i, s, spec, sim, methods, s, truncation_days, points, cell_width)
            for i, s in enumerate(seeds)]
    if jobs > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(_one_replicate)(*a) for a in args)
    else:
        results = []
        for k, a in enumerate(args):
            results.append(_one_replicate(*a))
            if progress is not None:
                progress(k + 1, len(args))
    res = StudyResult(spec, methods, points, truncation_days=truncation_days, seeds=seeds)
    for m in methods:
        res.metrics[m], res.converged[m], res.failures[m] = [], [], []
    for i, out in sorted(results, key=lambda r: r[0]):
        for m, (rm, conv, err) in out.items():
            if rm is None:
                res.failures[m].append((i, err))
                continue
            res.metrics[m].append(rm)
            res.converged[m].append(conv)
    return res
