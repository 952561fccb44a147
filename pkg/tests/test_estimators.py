# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spatialplus.basis import LocationSet, build_basis, tps_kernel
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators import (
    GAUSSIAN, GLM, MODULES, RegressionProblem, fit_model, fit_partial_residual, get_estimator, mse_fitted
)
from spatialplus.estimators.modules.spatial_plus import expanded_beta
from spatialplus.smoothing import lambda_grid


def test_registry() -> None:
    assert set(MODULES) == {'null', 'spatial', 'rsr', 'gsem', 'partial_residual', 'spatial_plus'}
    assert set(GLM) == {'null', 'spatial', 'rsr', 'spatial_plus'}
    assert 'gsem' in GAUSSIAN
    with pytest.raises(SpatialError) as info:
        get_estimator('gsem', glm=True)
    assert info.value.code == ErrorCode.INVALID_INPUT


def test_spatial_matches_dense_solve(problem) -> None:
    op = problem.smooth_operator
    lam = lambda_grid(op)[14]
    fit = fit_model('spatial', problem.replace(lam=lam))

    X = problem.X
    p = X.shape[1]
    Z = np.hstack([X, op.phi])
    P = np.zeros((Z.shape[1], Z.shape[1]))
    P[p:, p:] = np.diag(op.mu)
    coefs = np.linalg.solve(Z.T @ Z + lam * P, Z.T @ problem.y)

    assert fit.names == ('(Intercept)', 'x')
    assert_allclose(fit.beta_hat, coefs[:p], rtol=1e-8)
    assert_allclose(fit.f_hat, op.phi @ coefs[p:], atol=1e-8)
    assert fit.lambdas == {'lambda': lam}


def test_spatial_plus_matches_expanded_form(problem) -> None:
    op = problem.operator
    grid = lambda_grid(op)
    lam, lam_x = grid[12], grid[16]
    plain = problem.replace(intercept=False, lam=lam, lam_x=lam_x)
    fit = fit_model('spatial_plus', plain)

    assert_allclose(fit.beta('x'), expanded_beta(plain, lam, lam_x), rtol=1e-8)

    n = problem.n
    gamma = problem.basis.gamma
    S = np.linalg.inv(np.eye(n) + lam * n * gamma)
    S_x = np.linalg.inv(np.eye(n) + lam_x * n * gamma)
    r = problem.covariates[:, 0] - S_x @ problem.covariates[:, 0]
    R = np.eye(n) - S
    assert_allclose(fit.beta('x'), (r @ R @ problem.y) / (r @ R @ r), rtol=1e-7)


def test_unpenalized_estimates_coincide(truncated_problem) -> None:
    spatial = fit_model('spatial_fx', truncated_problem)
    gsem = fit_model('gsem_fx', truncated_problem)
    plus = fit_model('spatial_plus_fx', truncated_problem)

    assert str(spatial.model_tag) == 'spatial_fx'
    assert_allclose(gsem.beta('x'), spatial.beta('x'), rtol=1e-8)
    assert_allclose(plus.beta('x'), spatial.beta('x'), rtol=1e-8)
    assert_allclose(plus.fitted, spatial.fitted, atol=1e-8)


def test_rsr_equals_null(problem) -> None:
    null = fit_model('null', problem)
    rsr = fit_model('rsr', problem)
    assert_allclose(rsr.beta_hat, null.beta_hat, rtol=1e-10)
    assert rsr.edf > null.edf


def test_gsem_equals_partial_residual_at_common_lambda(problem) -> None:
    lam = lambda_grid(problem.operator)[13]
    gsem = fit_model('gsem', problem.replace(lam=lam, lam_x=lam))
    partial = fit_partial_residual(problem, common_lambda=lam)
    assert gsem.names == ('x',)
    assert not gsem.comparable
    assert_allclose(gsem.beta('x'), partial.beta('x'), rtol=1e-8)


def test_partial_residual_without_penalty(truncated_problem) -> None:
    partial = fit_partial_residual(truncated_problem, common_lambda=1e-12)
    spatial = fit_model('spatial_fx', truncated_problem)
    assert_allclose(partial.beta('x'), spatial.beta('x'), rtol=1e-5)


@pytest.mark.parametrize('name', ['null', 'spatial', 'rsr', 'gsem', 'spatial_plus', 'partial_residual'])
def test_linear_form_reproduces_fit(problem, name) -> None:
    if name == 'partial_residual':
        fit = fit_partial_residual(problem)
    else:
        fit = fit_model(name, problem)
    form = get_estimator(name).linear_form(problem, fit.lambdas)
    assert_allclose(form.beta_map @ problem.y, fit.beta_hat, rtol=1e-7, atol=1e-10)
    assert_allclose(form.fitted_operator(problem.y), fit.fitted, rtol=1e-7, atol=1e-8)


def test_covariate_in_nullspace_rejected(sample) -> None:
    points, _, y = sample
    x = 1.0 + 2.0 * points[:, 0]
    problem = RegressionProblem.from_arrays(y, x, points, names=('x',))
    with pytest.raises(SpatialError) as info:
        fit_model('spatial_plus', problem)
    assert info.value.code == ErrorCode.DEGENERATE_RESIDUALS
    with pytest.raises(SpatialError) as info:
        fit_model('spatial', problem)
    assert info.value.code == ErrorCode.COLLINEAR_COVARIATE_WITH_NULLSPACE


def test_covariate_in_truncated_span_rejected(truncated_problem) -> None:
    x = truncated_problem.operator.phi[:, 6] + 0.5 * truncated_problem.operator.phi[:, 10]
    with pytest.raises(SpatialError) as info:
        fit_model('spatial_plus', truncated_problem.replace(covariates=x[:, None]))
    assert info.value.code == ErrorCode.DEGENERATE_RESIDUALS


def test_saturated_unpenalized_fit(problem) -> None:
    with pytest.raises(SpatialError) as info:
        fit_model('spatial_fx', problem)
    assert info.value.code == ErrorCode.SINGULAR_DESIGN


def test_problem_validation(sample) -> None:
    points, x, y = sample
    with pytest.raises(SpatialError) as info:
        RegressionProblem.from_arrays(y[:-1], x, points)
    assert info.value.code == ErrorCode.INVALID_INPUT
    with pytest.raises(SpatialError) as info:
        RegressionProblem.from_arrays(y, x, points, lam=0.0)
    assert info.value.code == ErrorCode.NON_POSITIVE_LAMBDA
    with pytest.raises(SpatialError) as info:
        RegressionProblem.from_arrays(y, np.column_stack([x, x]), points)
    assert info.value.code == ErrorCode.SINGULAR_DESIGN


def test_spatial_plus_reduces_confounding_bias(rng, make_sample) -> None:
    points, x, y = make_sample(rng, n=100, noise_x=0.3, noise_y=1.0)
    problem = RegressionProblem.from_arrays(y, x, points, names=('x',))
    trend = np.sin(2 * np.pi * points[:, 0]) + np.cos(np.pi * points[:, 1])
    mean_y = 3.0 * x - trend

    bias = {}
    for name in ('spatial', 'spatial_plus'):
        fit = fit_model(name, problem)
        form = get_estimator(name).linear_form(problem, fit.lambdas)
        bias[name] = (form.beta_map @ mean_y)[-1] - 3.0
    assert abs(bias['spatial_plus']) < abs(bias['spatial'])


def test_fit_report(problem) -> None:
    fit = fit_model('spatial_plus', problem)
    payload = fit.to_dict()
    assert payload['model'] == 'spatial_plus'
    assert [item['name'] for item in payload['coefficients']] == ['(Intercept)', 'x']
    assert set(payload['lambdas']) == {'lambda', 'lambda_x[x]'}
    assert 0.0 <= fit.deviance_explained <= 1.0
    assert mse_fitted(fit, fit.fitted) == 0.0


def dense_gamma(points) -> np.ndarray:
    """Bending energy matrix of order 2 from the radial block and the linear polynomials"""
    n, d = points.shape
    E = tps_kernel(np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1), 2, d)
    T = np.column_stack([np.ones(n), points])
    Q, _ = np.linalg.qr(T, mode='complete')
    Q2 = Q[:, d + 1:]
    return Q2 @ np.linalg.solve(Q2.T @ E @ Q2, Q2.T)


def jittered_instance(seed: int):
    rng = np.random.default_rng(seed)
    if seed % 2 == 0:
        n = int(rng.integers(20, 41))
        points = ((np.arange(n) + rng.uniform(-0.3, 0.3, n)) / n)[:, None]
    else:
        grid = LocationSet.grid((8, 8)).points + rng.uniform(-0.02, 0.02, (64, 2))
        n = int(rng.integers(30, 61))
        points = grid[rng.choice(64, n, replace=False)]
    x = np.sin(3 * points[:, 0]) + 0.5 * rng.standard_normal(n)
    y = 2.0 * x + np.cos(2 * points[:, -1]) + 0.3 * rng.standard_normal(n)
    return points, x, y


@pytest.mark.parametrize('seed', range(50))
def test_estimates_match_dense_solves(seed) -> None:
    points, x, y = jittered_instance(seed)
    problem = RegressionProblem.from_arrays(y, x, points, names=('x',), intercept=False)
    grid = lambda_grid(problem.operator)
    lam, lam_x = grid[10 + seed % 10], grid[12 + seed % 8]
    fixed = problem.replace(lam=lam, lam_x=lam_x)

    n = problem.n
    gamma = dense_gamma(points)
    A = np.eye(n) + lam * n * gamma
    system = np.block([[np.array([[x @ x]]), x[None, :]], [x[:, None], A]])
    solution = np.linalg.solve(system, np.concatenate([[x @ y], y]))
    spatial = fit_model('spatial', fixed)
    assert_allclose(spatial.beta('x'), solution[0], rtol=1e-8)
    assert_allclose(spatial.f_hat, solution[1:], atol=1e-8 * np.abs(solution[1:]).max())

    R = np.eye(n) - np.linalg.inv(A)
    r = x - np.linalg.solve(np.eye(n) + lam_x * n * gamma, x)
    assert_allclose(fit_model('spatial_plus', fixed).beta('x'), (r @ R @ y) / (r @ R @ r), rtol=1e-7)

    twice = R @ R
    assert_allclose(fit_partial_residual(fixed).beta('x'), (x @ twice @ y) / (x @ twice @ x), rtol=1e-7)


@pytest.mark.parametrize('name', ['null', 'spatial', 'rsr', 'gsem', 'spatial_plus', 'partial_residual'])
def test_scale_equivariance(problem, name) -> None:
    fit = fit_model(name, problem)

    scaled_y = fit_model(name, problem.with_response(4.0 * problem.y))
    assert_allclose(scaled_y.beta_hat, 4.0 * fit.beta_hat, rtol=1e-8, atol=1e-10)
    assert_allclose(scaled_y.fitted, 4.0 * fit.fitted, rtol=1e-8, atol=1e-10)

    scaled_x = fit_model(name, problem.replace(covariates=0.5 * problem.covariates))
    assert_allclose(scaled_x.beta('x'), 2.0 * fit.beta('x'), rtol=1e-8)
    assert_allclose(scaled_x.fitted, fit.fitted, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize('name', ['null', 'spatial', 'rsr', 'gsem', 'spatial_plus', 'partial_residual'])
def test_constant_shift_moves_only_the_intercept(problem, name) -> None:
    fit = fit_model(name, problem)
    shifted = fit_model(name, problem.with_response(problem.y + 5.0))
    offset = np.array([5.0 if label == '(Intercept)' else 0.0 for label in fit.names])
    assert_allclose(shifted.beta_hat, fit.beta_hat + offset, rtol=1e-8, atol=1e-9)
    assert_allclose(shifted.fitted, fit.fitted + 5.0, rtol=1e-8, atol=1e-9)


@pytest.mark.parametrize('name', ['spatial', 'rsr', 'gsem', 'spatial_plus', 'partial_residual'])
def test_rigid_motion_invariance(problem, name) -> None:
    grid = lambda_grid(problem.operator)
    fixed = problem.replace(lam=grid[14], lam_x=grid[16])
    angle = 1.1
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = fixed.replace(basis=build_basis(problem.locations.moved(rotation=rotation, shift=[3.0, -1.0])))

    fit = fit_model(name, fixed)
    fit_moved = fit_model(name, moved)
    assert_allclose(fit_moved.beta_hat, fit.beta_hat, rtol=1e-6, atol=1e-9)
    assert_allclose(fit_moved.fitted, fit.fitted, rtol=1e-6, atol=1e-8)


@pytest.mark.slow
def test_standard_error_matches_monte_carlo_spread() -> None:
    rng = np.random.default_rng(11)
    points = rng.uniform(size=(100, 2))
    x = np.sin(2 * np.pi * points[:, 0]) + 0.5 * rng.standard_normal(100)
    mean_y = 1.0 + 2.0 * x + 0.5 * points[:, 0] - points[:, 1]
    base = RegressionProblem.from_arrays(mean_y, x, points, k=30, names=('x',))
    fixed = base.replace(lam=lambda_grid(base.smooth_operator)[18])

    betas, ses = [], []
    for _ in range(400):
        fit = fit_model('spatial', fixed.with_response(mean_y + 0.5 * rng.standard_normal(100)))
        betas.append(fit.beta('x'))
        ses.append(fit.se('x'))
    assert abs(np.mean(ses) / np.std(betas, ddof=1) - 1.0) <= 0.15
