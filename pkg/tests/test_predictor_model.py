#!/usr/bin/env python3
"""
Tests for the latent-predictor model: Gaussian posterior, moment estimates,
deconvolution density and deconvolution-weighted sampling
"""

import os
import sys
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import trapezoid
from scipy.stats import norm

from osmee.errors import ConfigError, DomainError
from osmee.predictor_model import (
    DeconvDensity,
    ErrorModel,
    GaussianPrior,
    deconvolve_density,
    estimate_prior_moments,
    kernel_density,
    normal_reference_bandwidth,
    posterior_params,
    sample_deconv_posterior,
    sample_gaussian_posterior,
    sample_posterior,
)


@pytest.fixture
def contaminated():
    rng = np.random.default_rng(7)
    x = rng.normal(0.5, 0.25, 2000)
    return x + rng.normal(0.0, 0.141, x.size)


def test_error_model_rejects_negative_variance():
    with pytest.raises(DomainError):
        ErrorModel(-1.0)
    assert ErrorModel.from_sd(0.5).sigma_w2 == 0.25


def test_prior_moments_subtract_error_variance():
    w = np.random.default_rng(1).normal(0.5, 0.3, 500)
    prior = estimate_prior_moments(w, ErrorModel(0.0199))
    assert prior.mu_x == pytest.approx(np.mean(w))
    assert prior.sigma_x2 == pytest.approx(np.var(w, ddof=1) - 0.0199)


def test_prior_moments_without_error():
    w = np.array([0.1, 0.4, 0.5, 0.9])
    assert estimate_prior_moments(w, ErrorModel(0.0)).sigma_x2 == pytest.approx(np.var(w, ddof=1))


def test_prior_variance_floor():
    w = np.array([0.0, 0.1, 0.2, 0.3])
    prior = estimate_prior_moments(w, ErrorModel(10.0))
    assert prior.sigma_x2 == pytest.approx(0.05 * np.var(w, ddof=1))


def test_posterior_params_spot_values():
    prior = GaussianPrior(0.5, 0.0625)
    mean, var = posterior_params(prior, ErrorModel(0.019881), np.array([0.8, 0.5]))
    assert_allclose(mean[0], 0.727601, atol=2e-6)
    assert_allclose(var[0], 0.0150832, atol=2e-7)
    assert mean[1] == pytest.approx(0.5)


def test_posterior_params_without_error():
    mean, var = posterior_params(GaussianPrior(0.0, 1.0), ErrorModel(0.0), np.array([0.3, 2.0]))
    assert_array_equal(mean, [0.3, 2.0])
    assert_array_equal(var, [0.0, 0.0])


def test_gaussian_samples_are_constant_without_error():
    w = np.array([0.2, 0.7, 1.1])
    draws = sample_gaussian_posterior(GaussianPrior(0.5, 0.1), ErrorModel(0.0), w, 50, seed=3)
    assert_array_equal(draws.samples, np.repeat(w[:, None], 50, axis=1))


def test_gaussian_sample_means_within_clt_band():
    rng = np.random.default_rng(5)
    w = rng.normal(0.5, 0.3, 400)
    prior, err = GaussianPrior(0.5, 0.0625), ErrorModel(0.02)
    draws = sample_gaussian_posterior(prior, err, w, 3000, seed=9)
    mean, var = posterior_params(prior, err, w)
    z = np.abs(draws.samples.mean(axis=1) - mean) / np.sqrt(var / 3000)
    assert np.all(z < 4.5)


def test_gaussian_sampling_is_deterministic_and_thread_independent():
    w = np.linspace(0.0, 1.0, 150)
    prior, err = GaussianPrior(0.5, 0.1), ErrorModel(0.01)
    a = sample_gaussian_posterior(prior, err, w, 100, seed=42, threads=1)
    b = sample_gaussian_posterior(prior, err, w, 100, seed=42, threads=4)
    assert_array_equal(a.samples, b.samples)
    assert a.summary()["S"] == 100


def test_sample_count_must_be_at_least_two():
    with pytest.raises(ConfigError):
        sample_gaussian_posterior(GaussianPrior(0.0, 1.0), ErrorModel(0.1), np.zeros(3), 1, seed=0)


def test_pooled_draws_reproduce_prior_variance():
    rng = np.random.default_rng(8)
    x = rng.normal(0.5, 0.25, 2000)
    w = x + rng.normal(0.0, 0.141, x.size)
    err = ErrorModel(0.141 ** 2)
    prior = estimate_prior_moments(w, err)
    draws = sample_gaussian_posterior(prior, err, w, 3000, seed=1)
    target = np.var(w, ddof=1) - err.sigma_w2
    assert abs(draws.samples.var() / target - 1.0) < 0.05


def test_deconvolution_integrates_to_one(contaminated):
    dens = deconvolve_density(contaminated, ErrorModel(0.141 ** 2))
    assert trapezoid(dens.density, dens.grid) == pytest.approx(1.0, abs=0.01)
    assert np.all(dens.density >= 0)
    assert dens.grid.size == 512
    assert dens.grid[0] == pytest.approx(contaminated.min() - 3 * 0.141)


def test_deconvolution_beats_naive_kde(contaminated):
    dens = deconvolve_density(contaminated, ErrorModel(0.141 ** 2))
    truth = norm.pdf(dens.grid, 0.5, 0.25)
    naive = kernel_density(contaminated, dens.grid, normal_reference_bandwidth(contaminated, 0.0))
    ise_deconv = trapezoid((dens.density - truth) ** 2, dens.grid)
    ise_naive = trapezoid((naive - truth) ** 2, dens.grid)
    assert ise_deconv < ise_naive


def test_small_error_limit_matches_kernel_density(contaminated):
    sd = float(np.std(contaminated, ddof=1))
    dens = deconvolve_density(contaminated, ErrorModel((1e-6 * sd) ** 2), bandwidth=0.05)
    reference = kernel_density(contaminated, dens.grid, 0.05)
    assert_allclose(dens.density, reference, atol=1e-3)


def test_deconvolution_needs_positive_error():
    with pytest.raises(DomainError):
        deconvolve_density(np.linspace(0, 1, 50), ErrorModel(0.0))


def test_flat_density_posterior_centres_on_w():
    grid = np.linspace(-5.0, 5.0, 2001)
    dens = DeconvDensity(grid=grid, density=np.full(grid.size, 0.1), bandwidth=1.0)
    w = np.array([-0.5, 0.0, 0.7])
    draws = sample_deconv_posterior(dens, ErrorModel(0.04), w, 4000, seed=2)
    assert_allclose(draws.samples.mean(axis=1), w, atol=4 * 0.2 / np.sqrt(4000) + dens.spacing)


def test_spike_density_puts_all_draws_at_the_spike():
    grid = np.linspace(0.0, 1.0, 101)
    density = np.zeros(grid.size)
    density[40] = 100.0
    dens = DeconvDensity(grid=grid, density=density, bandwidth=0.1)
    draws = sample_deconv_posterior(dens, ErrorModel(0.01), np.array([0.1, 0.9]), 200, seed=4)
    assert np.all(np.abs(draws.samples - grid[40]) <= 0.5 * dens.spacing + 1e-12)


def test_gaussian_density_reproduces_conjugate_posterior():
    grid = np.linspace(-1.5, 2.5, 4001)
    dens = DeconvDensity(grid=grid, density=norm.pdf(grid, 0.5, 0.25), bandwidth=0.1)
    err = ErrorModel(0.141 ** 2)
    w = np.array([0.2, 0.5, 0.8, 1.1])
    draws = sample_deconv_posterior(dens, err, w, 3000, seed=6)
    mean, var = posterior_params(GaussianPrior(0.5, 0.0625), err, w)
    se = np.sqrt(var / 3000)
    assert np.all(np.abs(draws.samples.mean(axis=1) - mean) < 3.5 * se + dens.spacing)


def test_vanishing_weights_fall_back_to_gaussian():
    grid = np.linspace(0.0, 1.0, 101)
    dens = DeconvDensity(grid=grid, density=norm.pdf(grid, 0.5, 0.1), bandwidth=0.1)
    with pytest.warns(UserWarning):
        draws = sample_deconv_posterior(dens, ErrorModel(1e-4), np.array([0.5, 500.0]), 100, seed=0)
    assert np.all(np.isfinite(draws.samples))


def test_dispatcher_uses_gaussian_without_error():
    w = np.linspace(0.0, 1.0, 40)
    draws, info = sample_posterior("deconv", w, ErrorModel(0.0), 10, seed=0)
    assert draws.sampler == "gaussian"
    assert_array_equal(draws.samples[:, 0], w)
    assert "mu_x" in info


def test_dispatcher_rejects_unknown_sampler():
    with pytest.raises(ConfigError):
        sample_posterior("bootstrap", np.zeros(5), ErrorModel(0.1), 10, seed=0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
