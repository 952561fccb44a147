# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spatialplus.basis import LocationSet, build_basis, truncate_basis
from spatialplus.define import LAMBDA_GRID_LOWER, LAMBDA_GRID_SIZE, LAMBDA_GRID_UPPER
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.smoothing import (
    AmseContext, PenalizedLeastSquares, amse_components, apply_smoother, argmin_larger, gcv_score, lambda_grid,
    partial_spline, select_lambda, spectral_decompose
)


@pytest.fixture
def locs(rng):
    return LocationSet(rng.uniform(size=(50, 2)))


@pytest.fixture
def op(locs):
    return spectral_decompose(build_basis(locs))


def test_spectrum(op) -> None:
    assert op.nullspace_dim == 3
    assert np.all(op.mu[:3] == 0)
    assert np.all(np.diff(op.mu) >= 0)
    assert_allclose(op.phi.T @ op.phi, np.eye(50), atol=1e-10)
    assert_allclose(op.phi[:, 0], np.full(50, 1 / np.sqrt(50)))


def test_smoother_matches_dense_inverse(op) -> None:
    n = op.n
    lam = lambda_grid(op)[15]
    dense = np.linalg.inv(np.eye(n) + lam * n * op.basis.gamma)
    assert_allclose(op.matrix(lam), dense, atol=1e-8)


def test_trace_limits(op) -> None:
    assert abs(op.trace(1e12) - 3) < 1e-3
    assert abs(op.trace(1e-16) - op.n) < 1e-3
    lam = lambda_grid(op)[10]
    assert_allclose(op.residual_dof(lam), op.n - op.trace(lam))


def test_polynomials_pass_through(op, locs) -> None:
    linear = 1.0 + 2.0 * locs.points[:, 0] - locs.points[:, 1]
    for lam in (1e-3, 1.0, 1e3):
        assert_allclose(apply_smoother(op, linear, lam), linear, atol=1e-10)


def test_non_positive_lambda(op) -> None:
    y = np.ones(op.n)
    for lam in (0.0, -1.0):
        with pytest.raises(SpatialError) as info:
            apply_smoother(op, y, lam)
        assert info.value.code == ErrorCode.NON_POSITIVE_LAMBDA
    with pytest.raises(SpatialError):
        gcv_score(op, y, 0.0)


def test_rss_and_gcv(op, rng) -> None:
    y = rng.standard_normal(op.n)
    lam = lambda_grid(op)[12]
    S = op.matrix(lam)
    resid = y - S @ y
    assert_allclose(op.rss(y, lam), resid @ resid, rtol=1e-10)
    expected = op.n * (resid @ resid) / (op.n - np.trace(S)) ** 2
    assert_allclose(gcv_score(op, y, lam), expected, rtol=1e-10)


def test_partial_spline_matches_stacked_solve(op, locs, rng) -> None:
    n = op.n
    x = np.sin(5 * locs.points[:, 0]) + rng.standard_normal(n)
    y = 2.0 * x + np.cos(3 * locs.points[:, 1]) + 0.3 * rng.standard_normal(n)
    lam = lambda_grid(op)[14]

    fit = partial_spline(op, x, y, lam)
    system = np.block([
        [np.array([[x @ x]]), x[None, :]],
        [x[:, None], np.eye(n) + lam * n * op.basis.gamma],
    ])
    solution = np.linalg.solve(system, np.concatenate([[x @ y], y]))
    assert_allclose(fit.beta[0], solution[0], rtol=1e-8)
    assert_allclose(fit.f_hat, solution[1:], atol=1e-8)

    S = op.matrix(lam)
    R = np.eye(n) - S
    influence = S + np.outer(R @ x, R @ x) / (x @ R @ x)
    assert_allclose(fit.edf, np.trace(influence), rtol=1e-8)
    residual = y - influence @ y
    assert_allclose(gcv_score(op, y, lam, X=x), n * (residual @ residual) / (n - np.trace(influence)) ** 2,
                    rtol=1e-8)


def test_covariate_in_nullspace(op, locs) -> None:
    with pytest.raises(SpatialError) as info:
        partial_spline(op, locs.points[:, 0], np.ones(op.n), 1.0)
    assert info.value.code == ErrorCode.COLLINEAR_COVARIATE_WITH_NULLSPACE


def test_argmin_prefers_larger() -> None:
    assert argmin_larger(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.5, 0.5])) == 3.0
    assert argmin_larger(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.5, np.inf])) == 1.0
    with pytest.raises(SpatialError) as info:
        argmin_larger(np.array([1.0, 2.0]), np.array([np.inf, np.inf]))
    assert info.value.code == ErrorCode.DEGENERATE_DENOMINATOR


def test_grid(op) -> None:
    grid = lambda_grid(op, 20)
    assert grid.size == 20
    assert np.all(grid > 0)
    assert np.all(np.diff(grid) > 0)


def test_gcv_beats_extremes(op, locs, rng) -> None:
    truth = np.sin(2 * np.pi * locs.points[:, 0]) * np.cos(np.pi * locs.points[:, 1])
    y = truth + 0.3 * rng.standard_normal(op.n)
    grid = lambda_grid(op)
    lam = select_lambda(op, y, grid)
    assert lam in grid

    def error(value):
        diff = op.apply(y, value) - truth
        return diff @ diff

    assert error(lam) < error(grid[0])
    assert error(lam) < error(grid[-1])


def test_amse_of_smoother(op, locs) -> None:
    f = np.sin(3 * locs.points[:, 0])
    lam = lambda_grid(op)[10]
    S = op.matrix(lam)
    bias2, variance = amse_components(op, f, lam=lam, sigma=0.5)
    assert_allclose(bias2, np.sum((S @ f - f) ** 2) / op.n, rtol=1e-8)
    assert_allclose(variance, 0.25 * np.trace(S @ S) / op.n, rtol=1e-8)

    context = AmseContext(f_operator=lambda y: op.apply(y, lam), mean_y=f, sigma=0.5)
    assert_allclose(amse_components(op, f, context), (bias2, variance), rtol=1e-8)

    linear = 1.0 + locs.points[:, 1]
    assert amse_components(op, linear, lam=lam)[0] < 1e-20


def test_truncated_operator(locs) -> None:
    op = spectral_decompose(truncate_basis(build_basis(locs), 15))
    assert op.k == 15
    centered = op.without_constant()
    assert centered.k == 14
    assert centered.nullspace_dim == 2
    assert_allclose(centered.apply(np.ones(op.n), 1.0), 0.0, atol=1e-12)


def test_penalized_least_squares_oracle(rng) -> None:
    n, q = 40, 10
    Z = rng.standard_normal((n, q))
    z = rng.standard_normal(n)
    w = rng.uniform(0.5, 2.0, n)
    P = np.diag(np.concatenate([[0.0, 0.0], rng.uniform(1.0, 5.0, q - 2)]))
    lam = 0.7

    pls = PenalizedLeastSquares(Z, P, z, w)
    A = Z.T @ (Z * w[:, None])
    H = np.linalg.inv(A + lam * P)
    assert_allclose(pls.coefficients(lam), H @ Z.T @ (w * z), rtol=1e-8)
    assert_allclose(pls.edf(lam), np.trace(H @ A), rtol=1e-8)
    assert_allclose(pls.covariance(lam), H @ A @ H, rtol=1e-7, atol=1e-12)


def test_penalized_least_squares_wide_design(rng) -> None:
    n, q = 20, 30
    Z = rng.standard_normal((n, q))
    z = rng.standard_normal(n)
    P = np.diag(np.concatenate([[0.0, 0.0], np.ones(q - 2)]))
    lam = 2.0

    pls = PenalizedLeastSquares(Z, P, z)
    expected = np.linalg.solve(Z.T @ Z + lam * P, Z.T @ z)
    assert_allclose(pls.coefficients(lam), expected, rtol=1e-8, atol=1e-10)


def test_penalized_least_squares_singular(rng) -> None:
    column = rng.standard_normal(20)
    Z = np.column_stack([column, column])
    with pytest.raises(SpatialError) as info:
        PenalizedLeastSquares(Z, np.zeros((2, 2)), rng.standard_normal(20))
    assert info.value.code == ErrorCode.SINGULAR_DESIGN


def test_grid_window_follows_spectrum(op) -> None:
    grid = lambda_grid(op)
    positive = op.mu[op.mu > 0]
    assert grid.size == LAMBDA_GRID_SIZE
    assert_allclose(grid[0], LAMBDA_GRID_LOWER / positive.max())
    assert_allclose(grid[-1], LAMBDA_GRID_UPPER / positive.min())
    assert_allclose(lambda_grid(op, scale=2.0), 2.0 * grid)


def test_single_candidate_grid(op, rng) -> None:
    y = rng.standard_normal(op.n)
    assert select_lambda(op, y, [0.37]) == 0.37
    with pytest.raises(SpatialError) as info:
        select_lambda(op, y, [])
    assert info.value.code == ErrorCode.INVALID_INPUT


@pytest.mark.slow
def test_pure_noise_is_smoothed_heavily() -> None:
    op = spectral_decompose(build_basis(LocationSet(np.random.default_rng(1).uniform(size=(200, 2)))))
    small = 0
    for seed in range(40):
        y = np.random.default_rng(seed).standard_normal(200)
        small += op.trace(select_lambda(op, y)) < 0.25 * 200
    assert small >= 38


@pytest.mark.slow
def test_gcv_minimizer_is_interior() -> None:
    op = spectral_decompose(build_basis(LocationSet(np.random.default_rng(2).uniform(size=(100, 2)))))
    t = op.basis.locations.points
    truth = np.sin(2 * np.pi * t[:, 0]) * np.cos(np.pi * t[:, 1])
    grid = lambda_grid(op)
    interior = 0
    for seed in range(30):
        y = truth + 0.3 * np.random.default_rng(seed).standard_normal(100)
        interior += grid[0] < select_lambda(op, y, grid) < grid[-1]
    assert interior >= 27
