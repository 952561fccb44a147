# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from spatialplus.basis import LocationSet, build_basis, truncate_basis
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.random_fields import (
    CovarianceSpec, SimScenario, export_replicate, generate_replicate, project_to_spline_span, replicate_rng,
    sample_grf
)


@pytest.fixture
def scenario():
    return SimScenario(grid_size=12, n=60, k=20, replicates=2, seed=11)


def test_correlation_functions() -> None:
    spherical = CovarianceSpec.spherical(1.0)
    assert_allclose(spherical.correlation([0.0, 0.5, 1.0, 2.0]), [1.0, 0.3125, 0.0, 0.0])
    exponential = CovarianceSpec.exponential(5.0)
    assert_allclose(exponential.correlation([0.0, 5.0]), [1.0, np.exp(-1.0)])
    with pytest.raises(SpatialError) as info:
        CovarianceSpec('matern', 1.0)
    assert info.value.code == ErrorCode.INVALID_INPUT
    with pytest.raises(SpatialError):
        CovarianceSpec.exponential(-1.0)


def test_covariance_is_isotropic(rng) -> None:
    locs = LocationSet(rng.uniform(0, 10, size=(25, 2)))
    rotation = np.array([[0.0, -1.0], [1.0, 0.0]])
    spec = CovarianceSpec.exponential()
    assert_allclose(spec.matrix(locs.moved(rotation=rotation, shift=[1.0, 2.0])), spec.matrix(locs), atol=1e-12)


def test_single_point_field(rng) -> None:
    value = sample_grf(LocationSet([[1.0, 1.0]]), CovarianceSpec.spherical(), rng)
    assert value.shape == (1,)
    assert np.isfinite(value[0])


def test_grid_fields_factorize(rng) -> None:
    locs = LocationSet.grid((20, 20), 0.0, 10.0)
    for spec in (CovarianceSpec.exponential(), CovarianceSpec.spherical()):
        values = sample_grf(locs, spec, rng)
        assert values.shape == (400,)
        assert np.all(np.isfinite(values))


def test_not_positive_definite(rng, monkeypatch) -> None:
    monkeypatch.setattr(CovarianceSpec, 'matrix', lambda self, locs: -np.eye(locs.n))
    with pytest.raises(SpatialError) as info:
        sample_grf(LocationSet.grid((3, 3)), CovarianceSpec.exponential(), rng)
    assert info.value.code == ErrorCode.COVARIANCE_NOT_PSD


def test_projection(rng) -> None:
    basis = truncate_basis(build_basis(LocationSet(rng.uniform(size=(40, 2)))), 15)
    inside = basis.design @ rng.standard_normal(15)
    assert_allclose(project_to_spline_span(inside, basis, lam=0.0), inside, atol=1e-10)

    field = rng.standard_normal(40)
    once = project_to_spline_span(field, basis, lam=0.0)
    assert_allclose(project_to_spline_span(once, basis, lam=0.0), once, atol=1e-10)

    smoothed = project_to_spline_span(field, basis)
    assert np.var(smoothed) <= np.var(field)


def test_replicate_streams(scenario) -> None:
    first = generate_replicate(scenario, replicate_rng(scenario.seed, 1), index=1)
    again = generate_replicate(scenario, replicate_rng(scenario.seed, 1), index=1)
    other = generate_replicate(scenario, replicate_rng(scenario.seed, 2), index=2)

    assert_array_equal(first.y, again.y)
    assert_array_equal(first.sites, again.sites)
    assert not np.array_equal(first.y, other.y)


def test_replicate_structure(scenario) -> None:
    replicate = generate_replicate(scenario, replicate_rng(scenario.seed, 0))
    assert replicate.basis.k == 20
    assert len(set(replicate.sites)) == 60
    assert_allclose(replicate.f_true, -replicate.z - replicate.z_prime)
    assert_allclose(replicate.eta, 3.0 * replicate.x + replicate.f_true)

    quiet = generate_replicate(scenario.replace(sigma_x=0.0), replicate_rng(scenario.seed, 0))
    assert_allclose(quiet.x, 0.5 * quiet.z)


def test_glm_replicate(scenario) -> None:
    replicate = generate_replicate(scenario.replace(family='poisson'), replicate_rng(scenario.seed, 0))
    assert np.all(replicate.y >= 0)
    assert np.all(replicate.y == np.round(replicate.y))
    assert_allclose(replicate.mean, np.exp(replicate.eta))


def test_export(scenario, tmp_path) -> None:
    replicate = generate_replicate(scenario, replicate_rng(scenario.seed, 0))
    path = tmp_path / 'replicate.csv'
    export_replicate(replicate, path)
    frame = pd.read_csv(path, float_precision='round_trip')
    assert list(frame.columns) == ['site', 't1', 't2', 'x', 'y', 'f_true', 'z', 'z_prime']
    assert_array_equal(frame['y'].to_numpy(), replicate.y)


def test_scenario_validation() -> None:
    with pytest.raises(SpatialError) as info:
        SimScenario(grid_size=10, n=101)
    assert info.value.code == ErrorCode.INVALID_INPUT
    with pytest.raises(SpatialError):
        SimScenario(replicates=0)
    full = SimScenario.full()
    assert (full.n, full.k, full.replicates) == (1000, 300, 100)
