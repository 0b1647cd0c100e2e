from .diagnostics import ess, split_rhat
from .mcmc import McmcConfig, PosteriorSummary, inference_grid, initial_state, run_mcmc, sample_posterior
from .model import (
    Model,
    ModelVariant,
    Priors,
    Tag,
    build_model,
    fixed_coefficient_variant,
    log_posterior,
    log_posterior_grad,
    log_posterior_terms,
)
