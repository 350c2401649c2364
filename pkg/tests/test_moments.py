#!/usr/bin/env python3
"""
Tests for the Monte-Carlo conditional moments and their linearization
"""

import os
import sys
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from numpy.testing import assert_allclose

from osmee.basis import BasisKind, build_basis
from osmee.errors import DomainError, MonteCarloError
from osmee.family import ScaleParams, get_family
from osmee.moments import (
    CoefficientVector,
    LinearizedRow,
    PosteriorDesign,
    assemble_working_model,
    conditional_means,
    linearize,
    linearized_model,
    mc_conditional_mean,
    mc_conditional_variance,
)

POISSON = get_family("poisson")


def gauss_hermite_mean(func, m, v, nodes=64):
    """E func(X), X ~ N(m, v), by probabilists' Gauss-Hermite quadrature."""
    z, weights = hermegauss(nodes)
    return float(np.sum(weights * func(m + np.sqrt(v) * z)) / np.sqrt(2.0 * np.pi))


def linear_rows(draws):
    return np.column_stack([np.ones(draws.size), draws])


@pytest.fixture
def smooth_design():
    return build_basis(BasisKind("cubic_regression", 8), np.linspace(0.0, 1.0, 200))


def test_identity_link_zero_coefficients():
    rows = np.random.default_rng(0).normal(size=(50, 4))
    assert mc_conditional_mean(rows, np.zeros(4), get_family("gaussian")) == 0.0


def test_logit_zero_coefficients_is_half():
    rows = np.random.default_rng(1).normal(size=(50, 4))
    assert mc_conditional_mean(rows, np.zeros(4), get_family("bernoulli")) == 0.5


def test_lognormal_mean_example():
    rng = np.random.default_rng(2)
    draws = rng.normal(0.5, np.sqrt(0.0152), 3000)
    mu = np.exp(2.0 * draws)
    se = mu.std(ddof=1) / np.sqrt(draws.size)
    value = mc_conditional_mean(linear_rows(draws), CoefficientVector(np.array([0.0, 2.0]), np.zeros(0)), POISSON)
    assert abs(value - np.exp(1.0304)) < 3 * se


def test_lognormal_closed_form_within_one_percent():
    rng = np.random.default_rng(3)
    for _ in range(10):
        b0, b1 = rng.uniform(-1.0, 1.0), rng.uniform(0.5, 1.5)
        m, v = rng.uniform(0.0, 1.0), rng.uniform(0.005, 0.015)
        draws = rng.normal(m, np.sqrt(v), 3000)
        value = mc_conditional_mean(linear_rows(draws), np.array([b0, b1]), POISSON)
        exact = np.exp(b0 + b1 * m + 0.5 * b1 ** 2 * v)
        assert abs(value / exact - 1.0) < 0.01


def test_gauss_hermite_oracle(smooth_design):
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(100):
        b = np.concatenate([rng.normal(0.0, 0.5, 2), rng.normal(0.0, 0.3, smooth_design.q)])
        m, v = rng.uniform(0.2, 0.8), rng.uniform(0.005, 0.03)
        draws = rng.normal(m, np.sqrt(v), 3000)
        rows = smooth_design.rows(draws)
        mu = np.exp(rows @ b)
        se = mu.std(ddof=1) / np.sqrt(draws.size)
        oracle = gauss_hermite_mean(lambda x: np.exp(smooth_design.rows(x) @ b), m, v)
        if abs(mc_conditional_mean(rows, b, POISSON) - oracle) > 3 * se:
            failures += 1
    assert failures <= 2


def test_error_shrinks_as_draws_grow(smooth_design):
    rng = np.random.default_rng(5)
    errors = {500: [], 1000: [], 2000: []}
    for _ in range(60):
        b = np.concatenate([rng.normal(0.0, 0.5, 2), rng.normal(0.0, 0.3, smooth_design.q)])
        m, v = rng.uniform(0.2, 0.8), rng.uniform(0.005, 0.03)
        oracle = gauss_hermite_mean(lambda x: np.exp(smooth_design.rows(x) @ b), m, v)
        for S in errors:
            draws = rng.normal(m, np.sqrt(v), S)
            errors[S].append(abs(mc_conditional_mean(smooth_design.rows(draws), b, POISSON) - oracle))
    assert np.mean(errors[500]) > np.mean(errors[1000]) > np.mean(errors[2000])


def test_identity_linearization_is_centred():
    rows = np.random.default_rng(6).normal(size=(40, 5))
    b0 = np.random.default_rng(7).normal(size=5)
    lin = linearize(rows, b0, get_family("gaussian"))
    assert lin.offset == pytest.approx(0.0, abs=1e-12)
    assert_allclose(lin.m_row, rows.mean(axis=0), rtol=1e-12)


def test_degenerate_draws_linearization():
    r = np.array([1.0, 0.4, 0.2])
    rows = np.tile(r, (10, 1))
    b0 = np.array([0.1, 0.5, -0.3])
    eta = r @ b0
    lin = linearize(rows, b0, POISSON)
    assert_allclose(lin.m_row, np.exp(eta) * r, rtol=1e-12)
    assert lin.offset == pytest.approx(np.exp(eta) - np.exp(eta) * eta, rel=1e-12)


def test_linearization_is_exact_in_b():
    rng = np.random.default_rng(8)
    rows = rng.normal(0.0, 0.5, size=(30, 4))
    b0 = rng.normal(0.0, 0.3, 4)
    lin = linearize(rows, b0, POISSON)
    for _ in range(5):
        b = b0 + rng.normal(0.0, 1e-5, 4)
        eta0 = rows @ b0
        expected = np.mean(np.exp(eta0) + np.exp(eta0) * (rows @ (b - b0)))
        assert lin.offset + lin.m_row @ b == pytest.approx(expected, rel=1e-12)


def test_degenerate_poisson_variance():
    r = np.array([1.0, 0.3])
    rows = np.tile(r, (20, 1))
    b0 = np.array([0.2, 1.0])
    var_known, var_rel = mc_conditional_variance(rows, b0, POISSON)
    assert var_known == pytest.approx(np.exp(r @ b0), rel=1e-12)
    assert var_rel == 0.0


def test_bernoulli_pooled_variance():
    rng = np.random.default_rng(9)
    rows = linear_rows(rng.normal(0.0, 1.0, 500))
    b0 = np.array([0.3, 1.2])
    pbar = np.mean(1.0 / (1.0 + np.exp(-(rows @ b0))))
    var_known, var_rel = mc_conditional_variance(rows, b0, get_family("bernoulli"))
    assert var_known == pytest.approx(pbar * (1.0 - pbar), rel=1e-10)
    assert var_rel == 0.0


def test_bernoulli_decomposed_variance():
    rng = np.random.default_rng(10)
    rows = linear_rows(rng.normal(0.0, 1.0, 500))
    b0 = np.array([0.3, 1.2])
    mu = 1.0 / (1.0 + np.exp(-(rows @ b0)))
    var_known, _ = mc_conditional_variance(rows, b0, get_family("bernoulli"), bernoulli_pooled=False)
    assert var_known == pytest.approx(np.mean(mu * (1 - mu)) + np.var(mu, ddof=1), rel=1e-10)


def test_gaussian_linear_variance():
    rng = np.random.default_rng(11)
    m, v, beta1 = 0.5, 0.02, 3.0
    draws = rng.normal(m, np.sqrt(v), 3000)
    var_known, var_rel = mc_conditional_variance(linear_rows(draws), np.array([1.0, beta1]), get_family("gaussian"))
    target = beta1 ** 2 * v
    assert abs(var_known - target) < 3 * target * np.sqrt(2.0 / (draws.size - 1))
    assert var_rel == 1.0


def test_quasi_poisson_and_negative_binomial_split():
    rows = linear_rows(np.random.default_rng(12).normal(0.5, 0.1, 200))
    b0 = np.array([0.2, 1.0])
    mu = np.exp(rows @ b0)
    spread = np.var(mu, ddof=1)
    vk, vr = mc_conditional_variance(rows, b0, get_family("quasi_poisson"))
    assert vk == pytest.approx(spread, rel=1e-10)
    assert vr == pytest.approx(mu.mean(), rel=1e-12)
    vk, vr = mc_conditional_variance(rows, b0, get_family("negative_binomial"), ScaleParams(theta=4.0))
    assert vk == pytest.approx(mu.mean() + np.mean(mu ** 2) / 4.0 + spread, rel=1e-10)
    assert vr == 0.0
    vk, vr = mc_conditional_variance(rows, b0, get_family("negative_binomial"))
    assert vr == pytest.approx(np.mean(mu ** 2), rel=1e-12)


def test_robust_spread_close_to_variance_for_normal_draws():
    draws = np.random.default_rng(13).normal(0.0, 1.0, 20000)
    family = get_family("gaussian")
    robust, _ = mc_conditional_variance(linear_rows(draws), np.array([0.0, 2.0]), family, robust=True)
    plain, _ = mc_conditional_variance(linear_rows(draws), np.array([0.0, 2.0]), family)
    assert robust == pytest.approx(plain, rel=0.05)


def test_non_finite_mean_names_observation_and_sample():
    rows = np.array([[1.0, 0.0], [1.0, 1000.0], [1.0, 1.0]])
    with pytest.raises(MonteCarloError) as info:
        mc_conditional_mean(rows, np.array([0.0, 1.0]), POISSON, observation=7)
    assert info.value.observation == 7
    assert info.value.sample == 1


def test_assemble_shapes():
    rng = np.random.default_rng(14)
    rows = [LinearizedRow(offset=0.0, m_row=rng.normal(size=5), var_known=1.0) for _ in range(5)]
    model = assemble_working_model(rows, np.arange(5.0), np.eye(3), p=2)
    assert model.response.shape == (5,)
    assert model.M.shape == (5, 5)
    assert model.M_beta.shape == (5, 2)
    assert model.variances(1.0).shape == (5,)


def test_assemble_rejects_mismatch():
    rows = [LinearizedRow(offset=0.0, m_row=np.ones(4)) for _ in range(3)]
    with pytest.raises(DomainError):
        assemble_working_model(rows, np.zeros(4), np.eye(2))
    with pytest.raises(DomainError):
        assemble_working_model(rows, np.zeros(3), np.eye(3))


def test_identity_response_equals_y():
    rng = np.random.default_rng(15)
    family = get_family("gaussian")
    b0 = rng.normal(size=3)
    y = rng.normal(size=4)
    rows = []
    for _ in range(4):
        R = rng.normal(size=(25, 3))
        lin = linearize(R, b0, family)
        lin.var_known, lin.var_rel = mc_conditional_variance(R, b0, family)
        rows.append(lin)
    model = assemble_working_model(rows, y, np.eye(1), p=2, scale_class="unknown_constant")
    assert_allclose(model.response, y, atol=1e-12)


def test_poisson_toy_matches_hand_arithmetic():
    samples = [
        np.array([[1.0, 0.1, 0.0], [1.0, 0.3, 0.05]]),
        np.array([[1.0, 0.5, 0.1], [1.0, 0.4, 0.0]]),
        np.array([[1.0, 0.9, 0.3], [1.0, 0.7, 0.2]]),
    ]
    y = np.array([1.0, 0.0, 3.0])
    b0 = np.array([0.1, 0.8, -0.5])
    rows = []
    for R in samples:
        lin = linearize(R, b0, POISSON)
        lin.var_known, lin.var_rel = mc_conditional_variance(R, b0, POISSON)
        rows.append(lin)
    model = assemble_working_model(rows, y, np.array([[1.0]]), p=2)
    for i, R in enumerate(samples):
        e = [np.exp(R[s] @ b0) for s in range(2)]
        m_row = (e[0] * R[0] + e[1] * R[1]) / 2.0
        offset = (e[0] + e[1]) / 2.0 - m_row @ b0
        mean = (e[0] + e[1]) / 2.0
        spread = ((e[0] - mean) ** 2 + (e[1] - mean) ** 2) / 1.0
        assert model.response[i] == pytest.approx(y[i] - offset, abs=1e-12)
        assert_allclose(model.M[i], m_row, atol=1e-12)
        assert model.var_known[i] == pytest.approx(mean + spread, abs=1e-12)
        assert model.var_rel[i] == 0.0


def test_vectorized_path_matches_per_row_path():
    design = build_basis(BasisKind("truncated_linear", 4), np.linspace(0.0, 1.0, 50))
    rng = np.random.default_rng(16)
    samples = rng.normal(0.5, 0.2, size=(12, 40))
    y = rng.poisson(2.0, 12).astype(float)
    b0 = rng.normal(0.0, 0.3, 6)
    post = PosteriorDesign(design, samples)
    model = linearized_model(post, y, b0, POISSON)
    rows = []
    for i in range(12):
        R = post.sample_rows(i)
        lin = linearize(R, b0, POISSON)
        lin.var_known, lin.var_rel = mc_conditional_variance(R, b0, POISSON)
        rows.append(lin)
    manual = assemble_working_model(rows, y, design.fitting_penalty, p=2)
    assert_allclose(model.response, manual.response, rtol=1e-12, atol=1e-12)
    assert_allclose(model.M, manual.M, rtol=1e-12, atol=1e-14)
    assert_allclose(model.var_known, manual.var_known, rtol=1e-12)


def test_uncached_rows_match_cached_rows():
    design = build_basis(BasisKind("thin_plate", 8), np.linspace(0.0, 1.0, 80))
    samples = np.random.default_rng(17).normal(0.5, 0.2, size=(30, 50))
    cached = PosteriorDesign(design, samples)
    uncached = PosteriorDesign(design, samples, cache_bytes=0)
    assert cached.cached and not uncached.cached
    b = np.random.default_rng(18).normal(0.0, 0.2, design.p + design.q)
    assert_allclose(conditional_means(cached, b, POISSON), conditional_means(uncached, b, POISSON), rtol=1e-12)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
