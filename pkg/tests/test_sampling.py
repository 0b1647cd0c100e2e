import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import direct_sampling_loglik
from phylodelay.errors import ConfigurationError, DataError, DomainError
from phylodelay.grid import build_grid
from phylodelay.sampling import (SamplingCoefficients, SamplingData, bin_samples, sampling_data,
                                 sampling_grad, sampling_loglik)


def one_cell(r=None, m=1.0):
    off = None if r is None else np.log([r])
    return SamplingData(np.array([m]), np.array([1.0]), offset=off)


def test_unit_rate():
    assert sampling_loglik(one_cell(), np.zeros(1), np.array([0.0, 1.0])) == pytest.approx(-1.0, abs=1e-15)


def test_thinned_unit_rate():
    ll = sampling_loglik(one_cell(0.5), np.zeros(1), np.array([0.0, 1.0]))
    assert ll == pytest.approx(math.log(0.5) - 0.5, abs=1e-15)
    assert ll == pytest.approx(-1.19315, abs=1e-5)


def test_two_cells():
    d = SamplingData(np.array([2.0, 0.0]), np.ones(2))
    ll = sampling_loglik(d, np.array([0.3, -1.2]), np.array([math.log(2), 0.0]))
    assert ll == pytest.approx(2 * math.log(2) - 4, abs=1e-14)


def test_grad_examples():
    gg, gb = sampling_grad(one_cell(), np.zeros(1), np.array([0.0, 1.0]))
    assert gb[0] == pytest.approx(0.0, abs=1e-15)
    d = SamplingData(np.array([3.0, 1.0, 0.0]), np.ones(3))
    gg, _ = sampling_grad(d, np.array([0.1, 0.5, 2.0]), np.array([0.2, 0.0]))
    np.testing.assert_array_equal(gg, np.zeros(3))


def random_instance(rng, k=12, q=2, with_offset=True):
    m = rng.poisson(3.0, size=k).astype(float)
    w = rng.uniform(0.5, 2.0, size=k)
    off = np.log(rng.uniform(0.2, 1.0, size=k)) if with_offset else None
    F = rng.normal(size=(k, q))
    data = SamplingData(m, w, covariates=F, offset=off)
    gamma = rng.normal(size=k)
    beta = rng.normal(scale=0.5, size=2 + q)
    return data, gamma, beta


def test_grad_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(10):
        data, gamma, beta = random_instance(rng)
        gg, gb = sampling_grad(data, gamma, beta)
        for vec, an, which in ((gamma, gg, "g"), (beta, gb, "b")):
            for j in range(vec.size):
                e = np.zeros_like(vec)
                e[j] = 1e-5
                if which == "g":
                    fd = (sampling_loglik(data, gamma + e, beta) - sampling_loglik(data, gamma - e, beta)) / 2e-5
                else:
                    fd = (sampling_loglik(data, gamma, beta + e) - sampling_loglik(data, gamma, beta - e)) / 2e-5
                assert abs(an[j] - fd) <= 1e-5 * max(abs(fd), 1e-2)


@given(st.integers(0, 10_000))
def test_matches_direct_loop(seed):
    rng = np.random.default_rng(seed)
    data, gamma, beta = random_instance(rng)
    want = direct_sampling_loglik(data.counts, data.widths, data.offset, beta, gamma, data.covariates)
    assert sampling_loglik(data, gamma, beta) == pytest.approx(want, rel=1e-12, abs=1e-12)


@given(st.integers(0, 10_000))
def test_unit_reporting_is_bitwise_identical(seed):
    rng = np.random.default_rng(seed)
    data, gamma, beta = random_instance(rng, with_offset=False)
    with_r = SamplingData(data.counts, data.widths, covariates=data.covariates, offset=np.zeros(data.n_cells))
    assert sampling_loglik(with_r, gamma, beta) == sampling_loglik(data, gamma, beta)


def test_offset_is_thinning():
    rng = np.random.default_rng(2)
    data, gamma, beta = random_instance(rng, q=0)
    r = np.exp(data.offset)
    eta0 = beta[0] + beta[1] * gamma
    lam_tilde = np.exp(eta0) * r
    want = float(np.sum(data.counts * np.log(lam_tilde) - data.widths * lam_tilde))
    assert sampling_loglik(data, gamma, beta) == pytest.approx(want, rel=1e-12)


def test_zero_reporting_cells_excluded():
    d = sampling_data([1.5, 1.7], build_grid(0, 2, 1), window_end=2.0, reporting_probs=[0.0, 0.5])
    assert d.include.tolist() == [False, True]
    ll = sampling_loglik(d, np.zeros(2), np.array([0.0, 1.0]))
    assert ll == pytest.approx(2 * math.log(0.5) - 0.5)


def test_samples_in_zero_reporting_cell_rejected():
    with pytest.raises(DataError):
        sampling_data([0.5], build_grid(0, 2, 1), reporting_probs=[0.0, 0.5])


def test_bin_examples():
    g = build_grid(0, 2, 1)
    assert bin_samples([0.5, 1.5, 1.5], g).tolist() == [1, 2]
    assert bin_samples([], g).tolist() == [0, 0]
    with pytest.raises(DomainError):
        bin_samples([2.5], g)


def test_bin_uniform_counts():
    rng = np.random.default_rng(0)
    times = rng.uniform(0, 10, size=1000)
    counts = bin_samples(times, build_grid(0, 10, 1))
    assert counts.sum() == 1000
    sd = math.sqrt(1000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 100) <= 4 * sd)


@given(st.lists(st.floats(0, 9.99), max_size=50))
def test_bin_preserves_total(times):
    assert bin_samples(times, build_grid(0, 10, 1)).sum() == len(times)


def test_window_widths():
    d = sampling_data([0.2, 3.0], build_grid(0, 5, 1))
    np.testing.assert_allclose(d.widths, [1, 1, 1, 0, 0])
    # 3.0 sits in (2, 3]; cells beyond the oldest sample have no width
    assert d.include.tolist() == [True, True, True, False, False]


def test_coefficient_validation():
    with pytest.raises(ConfigurationError):
        SamplingCoefficients(np.zeros(2), prior_sd=np.array([1.0, 0.0]))
    c = SamplingCoefficients(np.zeros(3))
    assert np.all(c.prior_sd == 10.0) and np.all(c.prior_mean == 0.0)
    assert sampling_loglik(one_cell(), np.zeros(1), SamplingCoefficients(np.array([0.0, 1.0]))) == pytest.approx(-1.0)


def test_invariants():
    with pytest.raises(DataError):
        SamplingData(np.array([-1.0]), np.ones(1))
    with pytest.raises(DataError):
        SamplingData(np.array([1.0]), np.ones(1), offset=np.array([0.5]))
