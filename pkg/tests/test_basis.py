# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spatialplus.basis import (
    LocationSet, build_basis, nullspace_dimension, polynomial_block, polynomial_exponents, tps_kernel, truncate_basis
)
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators import RegressionProblem, fit_model
from spatialplus.smoothing import apply_smoother, lambda_grid, select_lambda, spectral_decompose


def test_nullspace_dimension() -> None:
    assert nullspace_dimension(2, 2) == 3
    assert nullspace_dimension(2, 1) == 2
    assert nullspace_dimension(3, 2) == 6
    assert polynomial_exponents(2, 2) == [(0, 0), (1, 0), (0, 1)]


def test_kernel_constants() -> None:
    r = np.array([0.0, 1.0, 2.0])
    assert_allclose(tps_kernel(r, 2, 2), [0.0, 0.0, 4 * np.log(2) / (8 * np.pi)])
    assert_allclose(tps_kernel(r, 2, 1), r ** 3 / 12)
    assert_allclose(tps_kernel(r, 2, 3), -r / (8 * np.pi))


def test_duplicate_points_rejected() -> None:
    with pytest.raises(SpatialError) as info:
        LocationSet([[0.0, 0.0], [1.0, 0.5], [0.0, 0.0]])
    assert info.value.code == ErrorCode.DUPLICATE_POINTS


def test_grid_shape() -> None:
    locs = LocationSet.grid((3, 4), 0.0, 2.0)
    assert locs.n == 12
    assert locs.d == 2
    assert locs.points.max() == 2.0
    assert_allclose(locs.mesh_ratio, 1.0)


def test_order_too_small() -> None:
    with pytest.raises(SpatialError) as info:
        build_basis(LocationSet.grid((4, 4)), m=1)
    assert info.value.code == ErrorCode.ORDER_TOO_SMALL


def test_collinear_locations() -> None:
    t = np.linspace(0, 1, 10)
    with pytest.raises(SpatialError) as info:
        build_basis(LocationSet(np.column_stack([t, 2 * t])), m=2)
    assert info.value.code == ErrorCode.RANK_DEFICIENT_POLYNOMIAL_BLOCK


def test_full_basis_structure(rng) -> None:
    locs = LocationSet(rng.uniform(size=(40, 2)))
    basis = build_basis(locs)
    M = basis.nullspace_dim

    assert basis.k == 40
    assert not basis.is_truncated
    assert_allclose(basis.design.T @ basis.design, np.eye(40), atol=1e-10)
    assert np.all(basis.penalty[:M] == 0)
    assert np.all(basis.penalty[M:] > 0)
    assert np.all(np.diff(basis.penalty[M:]) >= 0)
    assert_allclose(basis.gamma, basis.gamma.T)


def test_polynomials_carry_no_energy(rng) -> None:
    locs = LocationSet(rng.uniform(size=(40, 2)))
    basis = build_basis(locs)
    T = polynomial_block(locs.points, 2)
    scale = np.abs(basis.gamma).max()
    assert np.abs(basis.gamma @ T).max() <= 1e-8 * scale * np.abs(T).max()

    wiggle = np.sin(3 * locs.points[:, 0]) * np.cos(2 * locs.points[:, 1])
    assert basis.energy(wiggle) > 0
    assert_allclose(basis.energy(wiggle), wiggle @ basis.gamma @ wiggle, rtol=1e-8)


def test_penalty_invariant_under_rigid_motion(rng) -> None:
    locs = LocationSet(rng.uniform(size=(30, 2)))
    angle = 0.7
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = locs.moved(rotation=rotation, shift=[3.0, -1.0])

    gamma = build_basis(locs).gamma
    gamma_moved = build_basis(moved).gamma
    assert_allclose(gamma_moved, gamma, atol=1e-8 * np.abs(gamma).max())


def test_truncation(rng) -> None:
    basis = build_basis(LocationSet(rng.uniform(size=(30, 2))))
    small = truncate_basis(basis, 12)

    assert small.k == 12
    assert small.is_truncated
    assert_allclose(small.design, basis.design[:, :12])
    assert_allclose(small.penalty, basis.penalty[:12])
    assert not truncate_basis(basis, 30).is_truncated

    for k in (2, 31):
        with pytest.raises(SpatialError) as info:
            truncate_basis(basis, k)
        assert info.value.code == ErrorCode.RANK_OUT_OF_RANGE


def test_energy_matches_interpolant(rng) -> None:
    points = rng.uniform(size=(6, 2))
    f = np.exp(points[:, 0]) * np.sin(3 * points[:, 1])
    E = tps_kernel(np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1), 2, 2)
    T = np.column_stack([np.ones(6), points])
    system = np.block([[E, T], [T.T, np.zeros((3, 3))]])
    delta = np.linalg.solve(system, np.concatenate([f, np.zeros(3)]))[:6]

    assert_allclose(T.T @ delta, 0.0, atol=1e-8 * np.abs(delta).max())
    assert_allclose(build_basis(LocationSet(points)).energy(f), delta @ E @ delta, rtol=1e-8)


def test_full_rank_truncation_changes_nothing(rng) -> None:
    points = rng.uniform(size=(40, 2))
    x = np.cos(4 * points[:, 0]) + rng.standard_normal(40)
    y = 1.5 * x + np.sin(3 * points[:, 1]) + 0.3 * rng.standard_normal(40)
    full = fit_model('spatial', RegressionProblem.from_arrays(y, x, points))
    same = fit_model('spatial', RegressionProblem.from_arrays(y, x, points, k=40))
    assert_allclose(same.beta_hat, full.beta_hat, rtol=1e-12)
    assert_allclose(same.fitted, full.fitted, rtol=1e-12)


def test_polynomial_rank_is_polynomial_regression(rng) -> None:
    locs = LocationSet(rng.uniform(size=(25, 2)))
    basis = truncate_basis(build_basis(locs), 3)
    op = spectral_decompose(basis)
    assert np.all(op.mu == 0)
    assert_allclose(lambda_grid(op), [1.0])

    y = rng.standard_normal(25)
    T = polynomial_block(locs.points, 2)
    expected = T @ np.linalg.lstsq(T, y, rcond=None)[0]
    assert_allclose(apply_smoother(op, y, 1.0), expected, atol=1e-10)
    assert select_lambda(op, y) == 1.0


def test_truncated_fit_tracks_full_rank_fit(rng) -> None:
    locs = LocationSet.grid((10, 10))
    t = locs.points
    y = np.sin(2 * np.pi * t[:, 0]) * np.cos(np.pi * t[:, 1]) + 0.3 * rng.standard_normal(100)
    basis = build_basis(locs)
    full = spectral_decompose(basis)
    small = spectral_decompose(truncate_basis(basis, 30))

    lam_full = select_lambda(full, y)
    fit_full = full.apply(y, lam_full)
    fit_small = small.apply(y, select_lambda(small, y))
    residual_sd = np.sqrt(full.rss(y, lam_full) / full.residual_dof(lam_full))
    assert np.sqrt(np.mean((fit_small - fit_full) ** 2)) < residual_sd
