# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Gaussian random fields and the simulated confounding scenario.

Two independent fields z and z′ are sampled at randomly chosen nodes of a
regular grid and replaced by their GCV thin plate regression fits. The
covariate is x = 0.5z + ε^x, the true spatial effect f = −z − z′ and the
response y = βx + f + ε^y, or a draw from an exponential family with linear
predictor η = βx + f.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import linalg

from spatialplus.basis import LocationSet, TpsBasis, build_basis, truncate_basis
from spatialplus.define import JITTER_LADDER
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.glm.families import get_family
from spatialplus.glm.models import simulate_glm_response
from spatialplus.smoothing import select_lambda, spectral_decompose


@dataclass(frozen=True)
class CovarianceSpec:
    family: str
    """ exponential or spherical """
    range_: float
    """ Range R > 0 """
    power: float = 1.0
    """ Exponent p of the exponential family """

    def __post_init__(self):
        if self.family not in ('exponential', 'spherical'):
            raise SpatialError(ErrorCode.INVALID_INPUT, f'Unknown covariance family {self.family!r}')
        if not (self.range_ > 0 and self.power > 0):
            raise SpatialError(ErrorCode.INVALID_INPUT, 'Covariance range and power must be positive')

    @classmethod
    def exponential(cls, range_: float = 5.0, power: float = 1.0) -> 'CovarianceSpec':
        return cls('exponential', range_, power)

    @classmethod
    def spherical(cls, range_: float = 1.0) -> 'CovarianceSpec':
        return cls('spherical', range_)

    def correlation(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float) / self.range_
        if self.family == 'exponential':
            return np.exp(-h ** self.power)
        return np.where(h <= 1.0, 1.0 - 1.5 * h + 0.5 * h ** 3, 0.0)

    def matrix(self, locs: LocationSet) -> np.ndarray:
        return self.correlation(locs.distances)


def sample_grf(locs: LocationSet, spec: CovarianceSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Draw the field at the locations from N(0, C).

    The Cholesky factorization retries with growing diagonal jitter.

    Args:
        locs: Sampling locations
        spec: Covariance model
        rng: Random generator
    """
    C = spec.matrix(locs)
    factor = None
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            factor = linalg.cholesky(C + jitter * np.eye(locs.n), lower=True)
            if jitter:
                logging.info(f'{spec.family} covariance factorized with jitter {jitter:g}')
            break
        except linalg.LinAlgError:
            continue
    if factor is None:
        raise SpatialError(
            ErrorCode.COVARIANCE_NOT_PSD,
            f'{spec.family} covariance not positive definite with jitter {JITTER_LADDER[-1]}'
        )
    return factor @ rng.standard_normal(locs.n)


def project_to_spline_span(field_values, basis: TpsBasis, lam: float | None = None) -> np.ndarray:
    """
    Fitted values of a thin plate regression of the field on the basis.

    Args:
        field_values: Field at the basis locations
        basis: Full or truncated basis
        lam: Fixed smoothing parameter, GCV when None, 0 for the plain projection
    """
    op = spectral_decompose(basis)
    if lam is None:
        lam = select_lambda(op, field_values)
    return op.apply(field_values, lam)


@dataclass(frozen=True)
class SimScenario:
    grid_size: int = 50
    extent: float = 10.0
    n: int = 400
    k: int = 100
    m: int = 2
    beta: float = 3.0
    sigma_x: float = 0.1
    sigma_y: float = 1.0
    family: str = 'gaussian'
    binomial_size: int = 10
    replicates: int = 50
    seed: int = 0
    covariate_field: CovarianceSpec = field(default_factory=CovarianceSpec.exponential)
    residual_field: CovarianceSpec = field(default_factory=CovarianceSpec.spherical)

    def __post_init__(self):
        if self.n > self.grid_size ** 2:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'{self.n} sites do not fit a {self.grid_size}² grid')
        if self.replicates < 1:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'At least one replicate is required')

    @classmethod
    def desk(cls, **kwargs) -> 'SimScenario':
        return cls(**kwargs)

    @classmethod
    def full(cls, **kwargs) -> 'SimScenario':
        return cls(**{'n': 1000, 'k': 300, 'replicates': 100, **kwargs})

    def replace(self, **changes) -> 'SimScenario':
        return replace(self, **changes)

    def response_family(self):
        if self.family == 'binomial':
            return get_family('binomial', size=self.binomial_size)
        if self.family == 'gaussian':
            return get_family('gaussian', sigma=self.sigma_y)
        return get_family(self.family)

    @property
    def grid(self) -> LocationSet:
        return LocationSet.grid((self.grid_size, self.grid_size), 0.0, self.extent)


@dataclass(frozen=True, eq=False)
class Replicate:
    index: int
    sites: np.ndarray
    """ Grid node index of every location """
    basis: TpsBasis
    x: np.ndarray
    y: np.ndarray
    f_true: np.ndarray
    z: np.ndarray
    z_prime: np.ndarray
    eta: np.ndarray
    mean: np.ndarray
    """ E(y) on the response scale """

    @property
    def locations(self) -> LocationSet:
        return self.basis.locations

    def to_frame(self) -> pd.DataFrame:
        points = self.locations.points
        frame = pd.DataFrame({'site': self.sites})
        for axis in range(points.shape[1]):
            frame[f't{axis + 1}'] = points[:, axis]
        frame['x'] = self.x
        frame['y'] = self.y
        frame['f_true'] = self.f_true
        frame['z'] = self.z
        frame['z_prime'] = self.z_prime
        return frame


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream of replicate index, whatever the batch layout"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_replicate(scenario: SimScenario, rng: np.random.Generator, index: int = 0) -> Replicate:
    """
    Simulate one data set.

    Args:
        scenario: Simulation settings
        rng: Random generator of this replicate
        index: Replicate number recorded in the output
    """
    grid = scenario.grid
    sites = rng.choice(grid.n, size=scenario.n, replace=False)
    locs = LocationSet(grid.points[sites])
    basis = build_basis(locs, scenario.m)
    if scenario.k < basis.n:
        basis = truncate_basis(basis, scenario.k)

    z = project_to_spline_span(sample_grf(locs, scenario.covariate_field, rng), basis)
    z_prime = project_to_spline_span(sample_grf(locs, scenario.residual_field, rng), basis)
    x = 0.5 * z + scenario.sigma_x * rng.standard_normal(scenario.n)
    f_true = -z - z_prime
    eta = scenario.beta * x + f_true

    if scenario.family == 'gaussian':
        y = eta + scenario.sigma_y * rng.standard_normal(scenario.n)
        mean = eta
    else:
        family = scenario.response_family()
        y = simulate_glm_response(eta, family, rng)
        mean = family.inverse_link(eta)

    return Replicate(
        index=index, sites=sites, basis=basis, x=x, y=y, f_true=f_true, z=z, z_prime=z_prime, eta=eta, mean=mean,
    )


def export_replicate(replicate: Replicate, path) -> None:
    """
    Write a replicate as CSV, columns site, coordinates, x, y, f_true, z, z_prime.
    """
    replicate.to_frame().to_csv(path, index=False)
