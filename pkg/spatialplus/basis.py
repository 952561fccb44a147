# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Thin plate spline design and penalty objects.

The penalty of the natural thin plate spline through the values f at the
locations is fᵀΓf with Γ = Q₂(Q₂ᵀEQ₂)⁻¹Q₂ᵀ, where E holds the radial Green's
function between locations and Q₂ spans the complement of the polynomial
block T. The same eigendecomposition of Q₂ᵀEQ₂ yields the orthonormal
coefficient basis used by every estimator and its eigen-truncated, low rank
version.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement
from math import comb, factorial, gamma, pi

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from spatialplus.errors import ErrorCode, SpatialError


def nullspace_dimension(m: int, d: int) -> int:
    """Number M of monomials of total degree < m in d variables"""
    return comb(m + d - 1, d)


def polynomial_exponents(m: int, d: int) -> list[tuple[int, ...]]:
    """Exponent vectors of the monomials of total degree < m, constant first."""
    exponents = []
    for degree in range(m):
        for combo in combinations_with_replacement(range(d), degree):
            exponent = [0] * d
            for axis in combo:
                exponent[axis] += 1
            exponents.append(tuple(exponent))
    return exponents


def polynomial_block(points: np.ndarray, m: int) -> np.ndarray:
    """
    Evaluate the unpenalized polynomial basis at the locations.

    Args:
        points: n×d matrix of coordinates
        m: Order of the thin plate penalty
    """
    points = np.asarray(points, dtype=float)
    columns = [np.prod(points ** np.array(exponent), axis=1) for exponent in polynomial_exponents(m, points.shape[1])]
    return np.column_stack(columns)


def tps_kernel(r, m: int, d: int) -> np.ndarray:
    """
    Radial Green's function η_{m,d} of the order m thin plate penalty in d dimensions.

    Args:
        r: Distances, any shape
        m: Order of the penalty
        d: Spatial dimension
    """
    r = np.asarray(r, dtype=float)
    power = 2 * m - d
    if d % 2 == 0:
        const = (-1) ** (m + 1 + d // 2) / (
            2 ** (2 * m - 1) * pi ** (d / 2) * factorial(m - 1) * factorial(m - d // 2)
        )
        positive = r > 0
        safe = np.where(positive, r, 1.0)
        values = np.where(positive, safe ** power * np.log(safe), 0.0)
    else:
        const = gamma(d / 2 - m) / (2 ** (2 * m) * pi ** (d / 2) * factorial(m - 1))
        values = r ** power
    return const * values


@dataclass(frozen=True, eq=False)
class LocationSet:
    points: np.ndarray
    """ n×d matrix of distinct coordinates """

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] == 0:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'Locations must be an n×d matrix, got shape {points.shape}')
        if not np.all(np.isfinite(points)):
            raise SpatialError(ErrorCode.INVALID_INPUT, 'Locations contain non finite coordinates')
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)

        if self.n > 1 and self.h_min <= 0:
            i, j = np.argwhere(np.triu(self.distances == 0, k=1))[0]
            raise SpatialError(ErrorCode.DUPLICATE_POINTS, f'Locations {i} and {j} coincide')

    @classmethod
    def grid(cls, shape, low=0.0, high=1.0) -> 'LocationSet':
        """
        Regular grid over the hypercube [low, high]^d.

        Args:
            shape: Number of nodes along each axis, its length sets d
            low: Lower corner coordinate
            high: Upper corner coordinate
        """
        if isinstance(shape, int):
            shape = (shape,)
        axes = [np.linspace(low, high, count) for count in shape]
        mesh = np.meshgrid(*axes, indexing='ij')
        return cls(np.column_stack([axis.ravel() for axis in mesh]))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @cached_property
    def distances(self) -> np.ndarray:
        if self.n == 1:
            return np.zeros((1, 1))
        return squareform(pdist(self.points))

    @cached_property
    def nearest(self) -> np.ndarray:
        """ Distance from each location to its nearest neighbour """
        if self.n == 1:
            return np.array([np.inf])
        masked = self.distances + np.diag(np.full(self.n, np.inf))
        return masked.min(axis=1)

    @property
    def h_min(self) -> float:
        return float(self.nearest.min())

    @property
    def h_max(self) -> float:
        return float(self.nearest.max())

    @property
    def mesh_ratio(self) -> float:
        if self.n == 1:
            return 1.0
        return self.h_max / self.h_min

    def moved(self, rotation=None, shift=None) -> 'LocationSet':
        """Rigid motion of every location"""
        points = self.points
        if rotation is not None:
            points = points @ np.asarray(rotation, dtype=float).T
        if shift is not None:
            points = points + np.asarray(shift, dtype=float)
        return LocationSet(points)


@dataclass(frozen=True, eq=False)
class TpsBasis:
    locations: LocationSet
    order: int
    radial: np.ndarray
    """ E, n×n radial matrix """
    poly: np.ndarray
    """ T, n×M polynomial block """
    design: np.ndarray
    """ n×k orthonormal coefficient basis, normalized constant first """
    penalty: np.ndarray
    """ Length k ascending diagonal penalty, M leading zeros """
    rank: int | None = None
    """ Truncation size, None for the full basis """

    @property
    def n(self) -> int:
        return self.locations.n

    @property
    def d(self) -> int:
        return self.locations.d

    @property
    def k(self) -> int:
        return self.design.shape[1]

    @property
    def nullspace_dim(self) -> int:
        return self.poly.shape[1]

    @property
    def is_truncated(self) -> bool:
        return self.rank is not None and self.rank < self.n

    @cached_property
    def gamma(self) -> np.ndarray:
        """ Γ restricted to the basis span, n×n symmetric PSD """
        M = self.nullspace_dim
        penalized = self.design[:, M:]
        gamma = (penalized * self.penalty[M:]) @ penalized.T
        return (gamma + gamma.T) / 2

    def energy(self, f) -> float:
        """Thin plate bending energy fᵀΓf"""
        f = np.asarray(f, dtype=float)
        M = self.nullspace_dim
        coefs = self.design[:, M:].T @ f
        return float(np.sum(self.penalty[M:] * coefs ** 2))


def build_basis(locs: LocationSet, m: int = 2) -> TpsBasis:
    """
    Build the full rank natural thin plate spline basis.

    Args:
        locs: Distinct locations
        m: Order of the penalty, m > d/2
    """
    d = locs.d
    if 2 * m <= d:
        raise SpatialError(ErrorCode.ORDER_TOO_SMALL, f'Order m={m} requires m > d/2 with d={d}')
    M = nullspace_dimension(m, d)
    if locs.n < M + 1:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'{locs.n} locations cannot support {M} polynomial terms')

    T = polynomial_block(locs.points, m)
    if np.linalg.matrix_rank(T) < M:
        raise SpatialError(
            ErrorCode.RANK_DEFICIENT_POLYNOMIAL_BLOCK,
            f'Polynomial block of order {m} has rank below {M}, locations are degenerate'
        )

    E = tps_kernel(locs.distances, m, d)
    Q, _ = linalg.qr(T)
    Q1, Q2 = Q[:, :M], Q[:, M:]
    if Q1[:, 0].sum() < 0:
        Q1 = -Q1

    F = Q2.T @ E @ Q2
    F = (F + F.T) / 2
    try:
        eigvals, eigvecs = linalg.eigh(F)
    except linalg.LinAlgError as exc:
        raise SpatialError(ErrorCode.EIGEN_FAILURE, str(exc)) from exc
    # Descending, largest penalized-block eigenvalue is the smoothest direction
    eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
    if eigvals.size and eigvals[-1] <= 0:
        raise SpatialError(
            ErrorCode.EIGEN_FAILURE,
            f'Radial block is not positive definite on the polynomial complement (min eigenvalue {eigvals[-1]:.3e})'
        )

    design = np.hstack([Q1, Q2 @ eigvecs])
    penalty = np.concatenate([np.zeros(M), 1.0 / eigvals])
    logging.debug(f'Built thin plate basis: n={locs.n}, d={d}, m={m}, M={M}')

    return TpsBasis(
        locations=locs, order=m, radial=E, poly=T, design=design, penalty=penalty,
        rank=None,
    )


def truncate_basis(basis: TpsBasis, k: int) -> TpsBasis:
    """
    Keep the polynomial columns and the k−M smoothest penalized directions.

    Args:
        basis: Full rank basis from build_basis
        k: Rank, M ≤ k ≤ n
    """
    M = basis.nullspace_dim
    if not M <= k <= basis.k:
        raise SpatialError(ErrorCode.RANK_OUT_OF_RANGE, f'Rank k={k} outside [{M}, {basis.k}]')

    return TpsBasis(
        locations=basis.locations, order=basis.order, radial=basis.radial, poly=basis.poly,
        design=basis.design[:, :k], penalty=basis.penalty[:k], rank=None if k == basis.n else k,
    )
