#!/usr/bin/env python3
"""
Tests for the heteroscedastic working-model fit and the naive penalized GLM
"""

import os
import sys
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from osmee.basis import BasisKind, build_basis
from osmee.errors import ConfigError, DomainError, FitError
from osmee.family import ScaleParams, get_family
from osmee.working_fit import (
    WorkingModel,
    criterion,
    fit_heteroscedastic,
    fit_naive_glm,
    gcv_score,
    scale_split,
)


def newton_glm(X, y, family, scale=None, iterations=100):
    """Plain unpenalized IRLS, iterated to machine precision."""
    b = np.linalg.lstsq(X, family.link_eval(family.initial_mean(y)), rcond=None)[0]
    for _ in range(iterations):
        eta = X @ b
        mu = family.mean(eta)
        d = family.mean_deriv(eta)
        V = family.variance(eta, scale or ScaleParams())
        weight = np.sqrt(d ** 2 / V)
        z = eta + (y - mu) / d
        b_new = np.linalg.lstsq(X * weight[:, None], z * weight, rcond=None)[0]
        if np.max(np.abs(b_new - b)) < 1e-14 * max(1.0, np.max(np.abs(b))):
            return b_new
        b = b_new
    return b


@pytest.fixture
def wiggly():
    rng = np.random.default_rng(31)
    x = np.sort(rng.uniform(0.0, 1.0, 120))
    y = np.sin(2 * np.pi * x) + rng.normal(0.0, 0.3, x.size)
    design = build_basis(BasisKind("thin_plate", 10), x)
    return x, y, design


def gaussian_model(y, R, design, phi_fixed=None):
    n = y.size
    return WorkingModel(
        response=y, M_beta=R[:, :design.p], M_u=R[:, design.p:],
        var_known=np.zeros(n), var_rel=np.ones(n), penalty=design.fitting_penalty,
        scale_class="unknown_constant", phi_fixed=phi_fixed,
    )


def test_ridge_closed_form_without_fixed_effects():
    rng = np.random.default_rng(0)
    M_u = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    model = WorkingModel(
        response=y, M_beta=np.zeros((30, 0)), M_u=M_u,
        var_known=np.ones(30), var_rel=np.zeros(30), penalty=np.eye(3),
    )
    fit = fit_heteroscedastic(model, lam=2.0)
    expected = np.linalg.solve(M_u.T @ M_u + 2.0 * np.eye(3), M_u.T @ y)
    assert_allclose(fit.u, expected, rtol=1e-10)
    assert fit.beta.size == 0
    assert fit.lam == 2.0


def test_infinite_lambda_is_weighted_least_squares():
    rng = np.random.default_rng(1)
    M_beta = np.column_stack([np.ones(40), rng.uniform(size=40)])
    M_u = rng.normal(size=(40, 4))
    v = rng.uniform(0.5, 2.0, 40)
    y = rng.normal(size=40)
    model = WorkingModel(
        response=y, M_beta=M_beta, M_u=M_u, var_known=v, var_rel=np.zeros(40), penalty=np.eye(4),
    )
    fit = fit_heteroscedastic(model, lam=np.inf)
    W = np.diag(1.0 / v)
    expected = np.linalg.solve(M_beta.T @ W @ M_beta, M_beta.T @ W @ y)
    assert_allclose(fit.beta, expected, rtol=1e-10)
    assert np.all(fit.u == 0.0)
    assert fit.edf == 2.0


def test_gcv_spot_values():
    assert gcv_score(5.0, 10, 1.0) == pytest.approx(0.61728, abs=1e-5)
    assert gcv_score(5.0, 10, 10.0) == np.inf
    assert gcv_score(5.0, 10, 12.5) == np.inf


def test_reml_is_invariant_to_row_order(wiggly):
    x, y, design = wiggly
    R = design.rows(x)
    perm = np.random.default_rng(2).permutation(y.size)
    base = criterion(gaussian_model(y, R, design), 3.0)
    shuffled = criterion(gaussian_model(y[perm], R[perm], design), 3.0)
    assert shuffled == pytest.approx(base, rel=1e-10)


def test_criterion_needs_finite_positive_lambda(wiggly):
    x, y, design = wiggly
    model = gaussian_model(y, design.rows(x), design)
    for lam in (0.0, np.inf, -1.0):
        with pytest.raises(ConfigError):
            criterion(model, lam)
    with pytest.raises(ConfigError):
        criterion(model, 1.0, which="aic")


@pytest.mark.parametrize("which", ["reml", "gcv"])
@pytest.mark.parametrize("seed", range(20))
def test_lambda_choice_is_at_least_as_good_as_fine_grid(seed, which):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(60, 200))
    x = rng.uniform(-1.0, 1.0, n)
    v = rng.uniform(0.02, 0.5, n) * (1.0 + x ** 2)
    y = rng.uniform(0.2, 2.0) * np.sin(3.0 * x) + rng.normal(0.0, np.sqrt(v))
    design = build_basis(BasisKind("thin_plate", 10), x)
    R = design.rows(x)
    model = WorkingModel(
        response=y, M_beta=R[:, :design.p], M_u=R[:, design.p:], var_known=v, var_rel=np.zeros(n),
        penalty=design.fitting_penalty,
    )
    fit = fit_heteroscedastic(model, method=which)
    log_grid = np.linspace(-8.0, 8.0, 200)
    values = np.array([criterion(model, 10.0 ** g, which) for g in log_grid])
    assert fit.criterion_value <= values.min() + 1e-8 * abs(values.min()) + 1e-10
    assert fit.criterion_value == pytest.approx(criterion(model, fit.lam, which), rel=1e-10)


def test_edf_decreases_with_lambda(wiggly):
    x, y, design = wiggly
    model = gaussian_model(y, design.rows(x), design, phi_fixed=1.0)
    edfs = [fit_heteroscedastic(model, lam=lam).edf for lam in (1e-4, 1e-2, 1.0, 1e2, 1e4)]
    assert all(a > b for a, b in zip(edfs, edfs[1:]))
    assert edfs[0] <= design.p + design.q + 1e-8
    assert edfs[-1] >= design.p - 1e-8


def test_weighted_residuals_orthogonal_to_fixed_columns(wiggly):
    x, y, design = wiggly
    R = design.rows(x)
    v = np.random.default_rng(3).uniform(0.05, 0.2, y.size)
    model = WorkingModel(
        response=y, M_beta=R[:, :2], M_u=R[:, 2:], var_known=v, var_rel=np.zeros(y.size),
        penalty=design.fitting_penalty,
    )
    fit = fit_heteroscedastic(model)
    resid = (y - R @ fit.b) / v
    assert_allclose(R[:, :2].T @ resid, 0.0, atol=1e-8 * np.sum(np.abs(y / v)))


def test_pearson_scale_estimate(wiggly):
    x, y, design = wiggly
    fit = fit_heteroscedastic(gaussian_model(y, design.rows(x), design))
    assert fit.phi == pytest.approx(0.09, rel=0.3)
    assert fit.converged


def test_negative_lambda_and_bad_method(wiggly):
    x, y, design = wiggly
    model = gaussian_model(y, design.rows(x), design)
    with pytest.raises(ConfigError):
        fit_heteroscedastic(model, lam=-1.0)
    with pytest.raises(ConfigError):
        fit_heteroscedastic(model, method="ml")


def test_working_model_shape_checks():
    with pytest.raises(DomainError):
        WorkingModel(
            response=np.zeros(4), M_beta=np.zeros((3, 2)), M_u=np.zeros((4, 1)),
            var_known=np.ones(4), var_rel=np.zeros(4), penalty=np.eye(1),
        )
    with pytest.raises(DomainError):
        WorkingModel(
            response=np.zeros(4), M_beta=np.zeros((4, 2)), M_u=np.zeros((4, 2)),
            var_known=np.ones(4), var_rel=np.zeros(4), penalty=np.eye(3),
        )
    with pytest.raises(DomainError):
        WorkingModel(
            response=np.zeros(2), M_beta=np.zeros((2, 1)), M_u=np.zeros((2, 1)),
            var_known=np.array([1.0, -1.0]), var_rel=np.zeros(2), penalty=np.eye(1),
        )


def test_all_zero_variances_fail():
    model = WorkingModel(
        response=np.zeros(3), M_beta=np.ones((3, 1)), M_u=np.zeros((3, 1)),
        var_known=np.zeros(3), var_rel=np.zeros(3), penalty=np.eye(1),
    )
    with pytest.raises(FitError):
        model.variances(1.0)


def test_scale_split_classes():
    known, rel = np.array([1.0, 2.0]), np.array([4.0, 8.0])
    vk, vr, phi = scale_split(get_family("poisson"), known, rel, None)
    assert_allclose(vk, [5.0, 10.0])
    assert phi == 1.0
    vk, vr, phi = scale_split(get_family("negative_binomial"), known, rel, ScaleParams(theta=4.0))
    assert_allclose(vk, [2.0, 4.0])
    assert_allclose(vr, 0.0)
    vk, vr, phi = scale_split(get_family("gamma"), known, rel, None)
    assert_allclose(vr, rel)
    assert phi is None


@pytest.mark.parametrize("kind", ["thin_plate", "cubic_regression"])
@pytest.mark.parametrize("lam", [1.0, np.inf])
def test_affine_data_reproduced(kind, lam):
    x = np.linspace(0.0, 2.0, 60)
    y = 1.5 - 0.7 * x
    design = build_basis(BasisKind(kind, 10), x)
    fit = fit_heteroscedastic(gaussian_model(y, design.rows(x), design, phi_fixed=1.0), lam=lam)
    assert_allclose(design.rows(x) @ fit.b, y, atol=1e-8)


# ---------------------------------------------------------------------- #
# Naive penalized GLM
# ---------------------------------------------------------------------- #

def glm_data(name, n=200, seed=4):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 1.0, n)
    eta = -0.5 + 1.5 * w
    family = get_family(name)
    scale = ScaleParams(theta=2.0) if name == "gamma" else ScaleParams()
    return w, family.sample(family.mean(eta), scale, rng), family


def known_scale(name):
    return ScaleParams(theta=2.0) if name == "gamma" else None


@pytest.mark.parametrize("name", ["gaussian", "poisson", "bernoulli", "gamma"])
def test_naive_linear_limit_matches_newton(name):
    w, y, family = glm_data(name)
    scale = known_scale(name)
    fit, design = fit_naive_glm(y, w, BasisKind("cubic_regression", 6), family, scale=scale, lam=np.inf)
    oracle = newton_glm(np.column_stack([np.ones(w.size), w]), y, family, scale)
    assert_allclose(fit.beta, oracle, rtol=1e-6, atol=1e-6)
    assert np.all(fit.u == 0.0)
    assert fit.converged


@pytest.mark.parametrize("name", ["gaussian", "poisson", "bernoulli", "gamma"])
def test_naive_unpenalized_limit_matches_newton(name):
    w, y, family = glm_data(name, seed=5)
    scale = known_scale(name)
    fit, design = fit_naive_glm(y, w, BasisKind("cubic_regression", 6), family, scale=scale, lam=0.0)
    oracle = newton_glm(design.rows(w), y, family, scale)
    assert_allclose(fit.b, oracle, rtol=1e-6, atol=1e-6)
    assert fit.converged


def test_naive_hinge_basis_without_penalty_matches_newton():
    rng = np.random.default_rng(6)
    w = rng.uniform(0.0, 1.0, 50)
    family = get_family("poisson")
    y = rng.poisson(family.mean(0.3 + 1.2 * w)).astype(float)
    fit, design = fit_naive_glm(y, w, BasisKind("truncated_linear", 5), family, lam=0.0)
    R = design.rows(w)
    assert R.shape == (50, 7)
    assert_allclose(fit.b, newton_glm(R, y, family), rtol=1e-6, atol=1e-6)


def test_naive_fit_reports_lambda_and_edf_of_its_coefficients():
    rng = np.random.default_rng(7)
    w = rng.uniform(-1.0, 1.0, 150)
    family = get_family("bernoulli")
    y = rng.binomial(1, family.mean(6.0 * w ** 3)).astype(float)
    fit, design = fit_naive_glm(y, w, BasisKind("thin_plate", 10), family)
    assert fit.converged
    eta = design.rows(w) @ fit.b
    mu = family.mean(eta)
    d = family.mean_deriv(eta)
    R = design.rows(w)
    model = WorkingModel(
        response=eta + (y - mu) / d, M_beta=R[:, :design.p], M_u=R[:, design.p:],
        var_known=family.variance(eta, ScaleParams()) / d ** 2, var_rel=np.zeros(w.size),
        penalty=design.fitting_penalty,
    )
    refit = fit_heteroscedastic(model, lam=fit.lam)
    assert_allclose(refit.b, fit.b, rtol=1e-6, atol=1e-8)
    assert refit.edf == pytest.approx(fit.edf, rel=1e-6)


def test_gaussian_naive_fit_is_a_single_working_fit(wiggly):
    x, y, design = wiggly
    fit, naive_design = fit_naive_glm(y, x, BasisKind("thin_plate", 10), get_family("gaussian"))
    assert fit.iterations <= 3
    direct = fit_heteroscedastic(gaussian_model(y, design.rows(x), design))
    assert_allclose(fit.fitted, design.rows(x) @ direct.b, rtol=1e-6, atol=1e-8)


def test_naive_fit_needs_more_rows_than_columns():
    w = np.linspace(0.0, 1.0, 8)
    with pytest.raises(DomainError):
        fit_naive_glm(np.ones(8), w, BasisKind("thin_plate", 10), get_family("poisson"))


def test_naive_fit_rejects_length_mismatch():
    with pytest.raises(DomainError):
        fit_naive_glm(np.ones(20), np.linspace(0.0, 1.0, 21), BasisKind("thin_plate", 5), get_family("poisson"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
