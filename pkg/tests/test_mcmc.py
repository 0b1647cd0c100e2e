import warnings

import numpy as np
import pytest

from phylodelay.delays import quantile, reporting_probs
from phylodelay.errors import ConfigurationError, ConvergenceWarning, DataError
from phylodelay.genealogy import parse_newick
from phylodelay.grid import build_grid
from phylodelay.inference import (McmcConfig, ModelVariant, PosteriorSummary, Tag, build_model, ess,
                                  fixed_coefficient_variant, run_mcmc, sample_posterior, split_rhat)
from phylodelay.simulate import SimConfig, scenario, simulate_replicate, washington_like_delays
from phylodelay.study import study_mcmc_config

FAST = McmcConfig(iterations=4000, burn_in=1000, thin=2, chains=2, seed=3)


@pytest.fixture(scope="module")
def desk_rep():
    spec = scenario("a-like")
    return simulate_replicate(spec, SimConfig(delays=washington_like_delays(2000, seed=1)), seed=21)


@pytest.mark.parametrize("bad", [dict(iterations=10, burn_in=10), dict(thin=0), dict(chains=0),
                                 dict(target_accept=1.0), dict(n_leapfrog=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigurationError):
        McmcConfig(**bad)


def test_seed_determinism_and_ordering(desk_rep):
    rep = desk_rep
    a = run_mcmc(FAST, ModelVariant(Tag.BNPR_PS), rep.observed_tree, rep.observed_times)
    b = run_mcmc(FAST, ModelVariant(Tag.BNPR_PS), rep.observed_tree, rep.observed_times)
    assert np.array_equal(a.ne_median, b.ne_median)
    assert np.array_equal(a.ne_lower, b.ne_lower) and np.array_equal(a.ne_upper, b.ne_upper)
    assert a.beta == b.beta and a.kappa == b.kappa
    c = run_mcmc(McmcConfig(**{**FAST.to_dict(), "seed": 4}), ModelVariant(Tag.BNPR_PS),
                 rep.observed_tree, rep.observed_times)
    assert not np.array_equal(a.ne_median, c.ne_median)
    assert np.all(a.ne_lower <= a.ne_median) and np.all(a.ne_median <= a.ne_upper)


def test_threaded_chains_match_serial():
    tree = parse_newick("((A:1,B:1):1,(C:0.5,D:0.5):1.5);")
    grid = build_grid(0, 2, 0.5)
    m = build_model(ModelVariant(Tag.BNPR), tree, grid)
    cfg = McmcConfig(iterations=500, burn_in=100, thin=1, chains=3, seed=1)
    par = sample_posterior(m, cfg)
    ser = sample_posterior(m, McmcConfig(**{**cfg.to_dict(), "parallel": False}))
    for k in par:
        assert np.array_equal(par[k], ser[k])


def test_summary_is_on_ne_scale():
    tree = parse_newick("((A:1,B:1):1,(C:0.5,D:0.5):1.5);")
    grid = build_grid(0, 2, 1.0)
    m = build_model(ModelVariant(Tag.BNPR), tree, grid)
    from phylodelay.inference.mcmc import summarize_draws
    draws = sample_posterior(m, FAST)
    s = summarize_draws(m, draws, FAST)
    ne = np.exp(draws["gamma"].reshape(-1, grid.n_cells))
    np.testing.assert_allclose(s.ne_mean, ne.mean(axis=0))
    np.testing.assert_allclose(s.ne_median, np.quantile(ne, 0.5, axis=0))


def test_unconverged_run_warns():
    tree = parse_newick("((A:1,B:1):1,(C:0.5,D:0.5):1.5);")
    with pytest.warns(ConvergenceWarning):
        s = run_mcmc(McmcConfig(iterations=60, burn_in=10, thin=1, chains=2, seed=0),
                     ModelVariant(Tag.BNPR), tree, cell_width=0.5)
    assert not s.converged


def test_zero_exposure_cells_are_flagged():
    tree = parse_newick("(A:1,B:1);")
    s = run_mcmc(FAST, ModelVariant(Tag.BNPR), tree, grid=build_grid(0, 3, 1.0))
    assert list(s.flagged_cells) == [1, 2]


def test_isochronous_samples_need_a_window():
    tree = parse_newick("((A:1,B:1):1,(C:0.5,D:0.5):1.5);")
    with pytest.raises(DataError):
        run_mcmc(FAST, ModelVariant(Tag.BNPR_PS), tree)
    s = run_mcmc(FAST, ModelVariant(Tag.BNPR_PS), tree, window_end=2.0)
    assert np.isfinite(s.beta["beta0"]["mean"])


def test_rp_variant_without_delays_is_rejected():
    tree = parse_newick("(A:1,B:1);")
    with pytest.raises(ConfigurationError):
        run_mcmc(FAST, ModelVariant(Tag.BNPR_PS_RP_OFFSET), tree)


def test_summary_csv_round_trip(tmp_path):
    tree = parse_newick("((A:1,B:1.5):1,(C:0.5,D:0.7):1.5);")
    s = run_mcmc(FAST, ModelVariant(Tag.BNPR_PS), tree, cell_width=0.5, keep_draws=True)
    s.write_csv(tmp_path / "s.csv")
    back = PosteriorSummary.read_csv(tmp_path / "s.csv")
    np.testing.assert_allclose(back.ne_median, s.ne_median, rtol=1e-12)
    np.testing.assert_allclose(back.grid.boundaries, s.grid.boundaries)
    s.write_draws(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == 1 + FAST.chains * FAST.n_keep


def test_diagnostics_known_cases():
    rng = np.random.default_rng(0)
    iid = rng.normal(size=(4, 2000))
    assert split_rhat(iid) == pytest.approx(1.0, abs=0.01)
    assert 6000 < ess(iid) < 10000
    ar = np.zeros((4, 4000))
    for t in range(1, 4000):
        ar[:, t] = 0.9 * ar[:, t - 1] + rng.normal(size=4)
    # AR(1) with rho = 0.9 has integrated time (1 + rho) / (1 - rho) = 19
    assert ess(ar) == pytest.approx(16000 / 19, rel=0.3)
    shifted = iid + np.arange(4)[:, None]
    assert split_rhat(shifted) > 1.5


def test_variant_nesting(desk_rep):
    rep = desk_rep
    cfg = study_mcmc_config(seed=5)
    base = run_mcmc(cfg, ModelVariant(Tag.BNPR), rep.observed_tree, rep.observed_times)
    nested = run_mcmc(cfg, ModelVariant(Tag.BNPR_PS, fixed_coefficients={1: 0.0}),
                      rep.observed_tree, rep.observed_times)
    overlap = (nested.ne_lower <= base.ne_upper) & (base.ne_lower <= nested.ne_upper)
    assert overlap.all()


def test_zero_design_column_leaves_prior(desk_rep):
    rep = desk_rep
    grid = build_grid(0, rep.observed_tree.root_time, 2.0)
    v = fixed_coefficient_variant(0.1, reporting_probs=np.ones(grid.n_cells))
    s = run_mcmc(study_mcmc_config(seed=6), v, rep.observed_tree, rep.observed_times, grid=grid)
    b = s.beta["beta_rp"]
    assert b["mean"] == pytest.approx(1.0, abs=0.02)
    assert b["sd"] == pytest.approx(0.1, rel=0.1)


def test_covariate_coefficient_recovered(desk_rep):
    rep = desk_rep
    grid = build_grid(0, rep.observed_tree.root_time, 2.0)
    r = reporting_probs(washington_like_delays(2000, seed=1), grid)
    s = run_mcmc(study_mcmc_config(seed=7), fixed_coefficient_variant(0.1, reporting_probs=r),
                 rep.observed_tree, rep.observed_times, grid=grid)
    assert 0.7 <= s.beta["beta_rp"]["mean"] <= 1.3


def test_scenario_c_bands_cover_outside_delay_window():
    spec = scenario("c-like")
    delays = washington_like_delays(2000, seed=1)
    rep = simulate_replicate(spec, SimConfig(delays=delays), seed=33)
    grid = build_grid(0, rep.observed_tree.root_time, 2.0)
    v = ModelVariant(Tag.BNPR_PS_RP_OFFSET, reporting_probs=reporting_probs(delays, grid))
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        s = run_mcmc(study_mcmc_config(seed=8), v, rep.observed_tree, rep.observed_times, grid=grid)
    lo, hi = grid.boundaries[:-1], grid.boundaries[1:]
    cells = (lo >= quantile(delays, 0.9)) & (hi <= spec.span[1])
    truth = spec(grid.midpoints[cells])
    inside = (s.ne_lower[cells] <= truth) & (truth <= s.ne_upper[cells])
    assert inside.mean() >= 0.90, inside.mean()
