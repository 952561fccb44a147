# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

"""
The smoother S_λ = (I + nλΓ)⁻¹ in its Demmler–Reinsch spectral form.

With Φ the orthonormal eigenvectors of nΓ and μ its ascending eigenvalues,
S_λ = Φ diag(1/(1+λμ)) Φᵀ, so fits, traces and GCV scores at any λ cost a
few vector operations once the decomposition exists.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import linalg

from spatialplus.basis import TpsBasis
from spatialplus.define import (
    COLLINEAR_TOL, EIGEN_CLAMP, LAMBDA_GRID_LOWER, LAMBDA_GRID_SIZE, LAMBDA_GRID_UPPER, ZERO_TOL
)
from spatialplus.errors import ErrorCode, SpatialError


@dataclass(frozen=True, eq=False)
class SmootherOperator:
    basis: TpsBasis
    mu: np.ndarray
    """ Eigenvalues of nΓ on the basis span, ascending, exact zeros on the polynomial space """
    phi: np.ndarray
    """ Orthonormal eigenvectors, the normalized constant is the first column """
    lam: float | None = None
    """ Current smoothing parameter """
    centered: bool = False
    """ If the constant direction was removed for a model with its own intercept """

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def k(self) -> int:
        return self.phi.shape[1]

    @property
    def nullspace_dim(self) -> int:
        return int(np.count_nonzero(self.mu == 0))

    def with_lambda(self, lam: float) -> 'SmootherOperator':
        return replace(self, lam=lam)

    def without_constant(self) -> 'SmootherOperator':
        """Smoother under a sum-to-zero constraint, for models carrying an intercept"""
        if self.centered:
            return self
        return replace(self, mu=self.mu[1:], phi=self.phi[:, 1:], centered=True)

    def shrinkage(self, lam: float) -> np.ndarray:
        return 1.0 / (1.0 + lam * self.mu)

    def apply(self, y, lam: float) -> np.ndarray:
        """
        S_λ applied to a vector or to each column of a matrix.

        λ = 0 is accepted here and gives the projection on the basis span.
        """
        y = np.asarray(y, dtype=float)
        coefs = self.phi.T @ y
        shrink = self.shrinkage(lam)
        if y.ndim == 2:
            shrink = shrink[:, None]
        return self.phi @ (shrink * coefs)

    def trace(self, lam: float) -> float:
        return float(np.sum(self.shrinkage(lam)))

    def residual_dof(self, lam: float) -> float:
        """n − Tr(S_λ) without cancellation"""
        ratio = lam * self.mu / (1.0 + lam * self.mu)
        return float((self.n - self.k) + np.sum(ratio))

    def matrix(self, lam: float) -> np.ndarray:
        return (self.phi * self.shrinkage(lam)) @ self.phi.T

    def rss(self, y, lam: float) -> float:
        """‖(I − S_λ)y‖²"""
        y = np.asarray(y, dtype=float)
        coefs = self.phi.T @ y
        outside = max(float(y @ y - coefs @ coefs), 0.0)
        inside = (lam * self.mu / (1.0 + lam * self.mu)) * coefs
        return outside + float(inside @ inside)


@dataclass(frozen=True)
class SmoothFitDiagnostics:
    edf: float
    gcv: float
    rss: float
    sigma_hat: float


@dataclass(frozen=True, eq=False)
class PartialSplineFit:
    beta: np.ndarray
    f_hat: np.ndarray
    fitted: np.ndarray
    rss: float
    edf: float
    gram_inv: np.ndarray
    """ (Xᵀ(I−S_λ)X)⁻¹ """
    resid_x: np.ndarray
    """ (I−S_λ)X """


@dataclass(frozen=True, eq=False)
class AmseContext:
    f_operator: Callable[[np.ndarray], np.ndarray]
    """ Linear map y ↦ f̂ of the estimator, applied column-wise to matrices """
    mean_y: np.ndarray
    """ E(y) under the truth """
    sigma: float = 1.0


def _constant_first(null: np.ndarray) -> np.ndarray:
    n, M = null.shape
    const = np.full(n, 1.0 / np.sqrt(n))
    rest = null - np.outer(const, const @ null)
    left, _, _ = linalg.svd(rest, full_matrices=False)
    return np.column_stack([const, left[:, :M - 1]])


def spectral_decompose(basis: TpsBasis) -> SmootherOperator:
    """
    Eigenpairs of nΓ on the span of the basis, ascending.

    Args:
        basis: Full or truncated thin plate basis
    """
    n, M = basis.n, basis.nullspace_dim
    design = basis.design
    C = design.T @ (n * basis.gamma) @ design
    C = (C + C.T) / 2
    try:
        mu, U = linalg.eigh(C)
    except linalg.LinAlgError as exc:
        raise SpatialError(ErrorCode.EIGEN_FAILURE, str(exc)) from exc

    zero = mu <= EIGEN_CLAMP * max(mu.max(), 0.0)
    if np.count_nonzero(zero) != M:
        raise SpatialError(
            ErrorCode.EIGEN_FAILURE, f'Penalty null space has dimension {np.count_nonzero(zero)}, expected {M}'
        )
    mu = np.where(zero, 0.0, mu)
    phi = design @ U
    phi[:, :M] = _constant_first(phi[:, :M])
    return SmootherOperator(basis=basis, mu=mu, phi=phi)


def apply_smoother(op: SmootherOperator, y, lam: float) -> np.ndarray:
    """
    Thin plate spline fitted to y, S_λ y.

    Args:
        op: Spectral smoother
        y: Data vector
        lam: Smoothing parameter, λ > 0
    """
    if not lam > 0:
        raise SpatialError(ErrorCode.NON_POSITIVE_LAMBDA, f'Smoothing parameter must be positive, got {lam}')
    return op.apply(y, lam)


def gcv_from_rss(n: int, rss: float, edf: float) -> float:
    denominator = n - edf
    if denominator <= ZERO_TOL * n:
        raise SpatialError(ErrorCode.DEGENERATE_DENOMINATOR, f'Effective degrees of freedom {edf:.6g} reach n={n}')
    return n * rss / denominator ** 2


def partial_spline(op: SmootherOperator, X, y, lam: float) -> PartialSplineFit:
    """
    Closed form fit of y = Xβ + f + ε with f penalized by nλfᵀΓf.

    β̂ = (Xᵀ(I−S)X)⁻¹Xᵀ(I−S)y and f̂ = S(y − Xβ̂). The edf is the trace of the
    full influence matrix S + (I−S)X(Xᵀ(I−S)X)⁻¹Xᵀ(I−S).

    Args:
        op: Spectral smoother
        X: n×p covariate matrix
        y: Response vector
        lam: Smoothing parameter, 0 for an unpenalized smooth
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)

    resid_x = X - op.apply(X, lam)
    gram = X.T @ resid_x
    gram = (gram + gram.T) / 2
    scale = np.linalg.eigvalsh(X.T @ X).max()
    if np.linalg.eigvalsh(gram).min() <= COLLINEAR_TOL * scale:
        raise SpatialError(
            ErrorCode.COLLINEAR_COVARIATE_WITH_NULLSPACE,
            'A covariate is (numerically) reproduced by the spatial smooth, Xᵀ(I−S)X is singular'
        )
    gram_inv = linalg.inv(gram, check_finite=False)
    gram_inv = (gram_inv + gram_inv.T) / 2
    beta = gram_inv @ (resid_x.T @ y)
    f_hat = op.apply(y - X @ beta, lam)
    fitted = X @ beta + f_hat
    residuals = y - fitted
    edf = op.trace(lam) + float(np.sum(gram_inv * (resid_x.T @ resid_x)))
    return PartialSplineFit(
        beta=beta, f_hat=f_hat, fitted=fitted, rss=float(residuals @ residuals), edf=edf,
        gram_inv=gram_inv, resid_x=resid_x,
    )


def gcv_score(op: SmootherOperator, y, lam: float, X=None) -> float:
    """
    GCV score n‖(I−A)y‖²/(n − Tr A)² of the smoother-only model, or of the
    partial spline model when covariates X are given.

    Args:
        op: Spectral smoother
        y: Response vector
        lam: Smoothing parameter, λ > 0
        X: Optional covariate matrix
    """
    if not lam > 0:
        raise SpatialError(ErrorCode.NON_POSITIVE_LAMBDA, f'Smoothing parameter must be positive, got {lam}')
    if X is None:
        dof = op.residual_dof(lam)
        if dof <= ZERO_TOL * op.n:
            raise SpatialError(ErrorCode.DEGENERATE_DENOMINATOR, f'Smoother interpolates the data at λ={lam:.3e}')
        return op.n * op.rss(y, lam) / dof ** 2
    fit = partial_spline(op, X, y, lam)
    return gcv_from_rss(op.n, fit.rss, fit.edf)


def lambda_grid(op: SmootherOperator, size: int = LAMBDA_GRID_SIZE, scale: float = 1.0) -> np.ndarray:
    """
    Log-spaced λ grid adapted to the penalty spectrum.

    The grid runs from λ with every penalized direction essentially kept to
    λ with every penalized direction essentially removed, that is from
    LAMBDA_GRID_LOWER/μ_max to LAMBDA_GRID_UPPER/μ_min over the positive
    penalty eigenvalues μ. It is not a fixed window scaled by 1/n: the
    spectrum of the penalty already carries the dependence on n, d, m and
    the basis rank. With no penalized direction the grid is [scale].
    """
    positive = op.mu[op.mu > 0]
    if positive.size == 0:
        return np.array([scale])
    low = LAMBDA_GRID_LOWER / positive.max()
    high = LAMBDA_GRID_UPPER / positive.min()
    return scale * np.geomspace(low, high, size)


def argmin_larger(grid: np.ndarray, scores: np.ndarray) -> float:
    """Grid value with the lowest score, ties toward the larger value"""
    if not np.any(np.isfinite(scores)):
        raise SpatialError(ErrorCode.DEGENERATE_DENOMINATOR, 'No λ on the grid gives a finite GCV score')
    best = np.min(scores)
    ties = np.flatnonzero(scores <= best + 1e-12 * abs(best))
    return float(grid[ties[-1]])


def select_lambda(op: SmootherOperator, y, grid=None, X=None) -> float:
    """
    GCV optimal λ over a grid.

    Args:
        op: Spectral smoother
        y: Response vector
        grid: Candidate λ values, lambda_grid(op) if not given
        X: Optional covariate matrix for partial spline models
    """
    grid = lambda_grid(op) if grid is None else np.sort(np.atleast_1d(np.asarray(grid, dtype=float)))
    if grid.size == 0:
        raise SpatialError(ErrorCode.INVALID_INPUT, 'Empty smoothing parameter grid')
    if grid[0] <= 0:
        raise SpatialError(ErrorCode.NON_POSITIVE_LAMBDA, 'Smoothing parameter grid must be positive')

    scores = np.empty(grid.size)
    for i, lam in enumerate(grid):
        try:
            scores[i] = gcv_score(op, y, lam, X)
        except SpatialError as exc:
            if exc.code != ErrorCode.DEGENERATE_DENOMINATOR:
                raise
            scores[i] = np.inf
    lam = argmin_larger(grid, scores)
    logging.debug(f'GCV selected λ={lam:.4e} from {grid.size} candidates')
    return lam


def smooth_diagnostics(op: SmootherOperator, y, lam: float) -> SmoothFitDiagnostics:
    """Edf, GCV, RSS and σ̂ of the smoother-only fit"""
    rss = op.rss(y, lam)
    dof = op.residual_dof(lam)
    return SmoothFitDiagnostics(
        edf=op.trace(lam), gcv=gcv_from_rss(op.n, rss, op.n - dof), rss=rss, sigma_hat=float(np.sqrt(rss / dof)),
    )


def amse_components(op: SmootherOperator, f_true, context: AmseContext | None = None,
                    lam: float | None = None, sigma: float = 1.0) -> tuple[float, float]:
    """
    Average squared bias B² and average variance V of f̂ at the data sites.

    Both are exact for the linear form of the estimator; without a context
    the smoother-only estimate S_λ y of y = f + ε is assumed.

    Args:
        op: Spectral smoother
        f_true: True smooth at the locations
        context: Linear form of another estimator
        lam: Smoothing parameter of the smoother-only estimate, defaults to op.lam
        sigma: Noise standard deviation for the smoother-only estimate
    """
    f_true = np.asarray(f_true, dtype=float)
    n = f_true.size
    if context is None:
        lam = op.lam if lam is None else lam
        if lam is None:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'No smoothing parameter for the AMSE of the smoother')
        bias = op.apply(f_true, lam) - f_true
        variance = sigma ** 2 * float(np.sum(op.shrinkage(lam) ** 2)) / n
        return float(bias @ bias) / n, variance

    bias = context.f_operator(context.mean_y) - f_true
    L = context.f_operator(np.eye(n))
    variance = context.sigma ** 2 * float(np.sum(L ** 2)) / n
    return float(bias @ bias) / n, variance


class PenalizedLeastSquares:
    """
    Weighted penalized least squares, min ‖√W(z − Zθ)‖² + λθᵀPθ.

    With A = ZᵀWZ and the balanced pencil A + sP = LLᵀ, the eigendecomposition
    L⁻¹(sP)L⁻ᵀ = UΛUᵀ (0 ≤ Λ ≤ 1) diagonalizes A + λP for every λ. This only
    needs the penalized problem to be identifiable, so model matrices with
    more columns than rows are fine as long as the penalty covers the excess.
    """

    def __init__(self, design, penalty, response, weights=None):
        Z = np.asarray(design, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        self.n, self.q = Z.shape
        z = np.asarray(response, dtype=float)
        w = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise SpatialError(ErrorCode.INVALID_INPUT, 'Weights must be finite and positive')
        if not np.all(np.isfinite(z)):
            raise SpatialError(ErrorCode.INVALID_INPUT, 'Working response is not finite')

        P = np.atleast_2d(np.asarray(penalty, dtype=float))
        A = Z.T @ (Z * w[:, None])
        A = (A + A.T) / 2
        trace_p = np.trace(P)
        self.balance = np.trace(A) / trace_p if trace_p > 0 else 1.0
        pencil = A + self.balance * P
        try:
            L = linalg.cholesky((pencil + pencil.T) / 2, lower=True)
        except linalg.LinAlgError as exc:
            raise SpatialError(ErrorCode.SINGULAR_DESIGN, 'Penalized model is not identifiable') from exc
        diag = np.abs(np.diag(L))
        if diag.min() <= COLLINEAR_TOL * diag.max():
            raise SpatialError(ErrorCode.SINGULAR_DESIGN, 'Penalized model is not identifiable')

        L_inv = linalg.solve_triangular(L, np.eye(self.q), lower=True)
        K = L_inv @ (self.balance * P) @ L_inv.T
        eigvals, U = linalg.eigh((K + K.T) / 2)

        self.design = Z
        self.weights = w
        self.response = z
        self.penalty = P
        self.eigvals = np.clip(eigvals, 0.0, 1.0)
        self._basis = L_inv.T @ U
        self._projected = self._basis.T @ (Z.T @ (w * z))

    def _denominator(self, lam: float) -> np.ndarray:
        return 1.0 - self.eigvals + (lam / self.balance) * self.eigvals

    def coefficients(self, lam: float) -> np.ndarray:
        den = self._denominator(lam)
        if np.any(den <= 0):
            raise SpatialError(ErrorCode.SINGULAR_DESIGN, f'Model is not identifiable at λ={lam}')
        return self._basis @ (self._projected / den)

    def fitted(self, lam: float) -> np.ndarray:
        return self.design @ self.coefficients(lam)

    def rss(self, lam: float) -> float:
        """Weighted residual sum of squares"""
        resid = self.response - self.fitted(lam)
        return float(np.sum(self.weights * resid ** 2))

    def edf(self, lam: float) -> float:
        return float(np.sum((1.0 - self.eigvals) / self._denominator(lam)))

    def gcv(self, lam: float, extra_edf: float = 0.0) -> float:
        return gcv_from_rss(self.n, self.rss(lam), self.edf(lam) + extra_edf)

    def select(self, grid, extra_edf: float = 0.0) -> float:
        grid = np.sort(np.atleast_1d(np.asarray(grid, dtype=float)))
        scores = np.empty(grid.size)
        for i, lam in enumerate(grid):
            try:
                scores[i] = self.gcv(lam, extra_edf)
            except SpatialError:
                scores[i] = np.inf
        return argmin_larger(grid, scores)

    def penalty_value(self, theta, lam: float) -> float:
        return float(lam * theta @ self.penalty @ theta)

    def covariance(self, lam: float) -> np.ndarray:
        """Unscaled frequentist covariance (A + λP)⁻¹A(A + λP)⁻¹ of the coefficients"""
        den = self._denominator(lam)
        return (self._basis * ((1.0 - self.eigvals) / den ** 2)) @ self._basis.T
