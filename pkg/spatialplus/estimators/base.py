# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

from dataclasses import dataclass, field, replace
from enum import Flag, auto
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg, stats

from spatialplus.basis import LocationSet, TpsBasis, build_basis, truncate_basis
from spatialplus.define import COLLINEAR_TOL, LAMBDA_GRID_SIZE
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.smoothing import SmootherOperator, spectral_decompose


class EstimatorCapability(Flag):
    GAUSSIAN = auto()
    """ If it fits Gaussian responses in closed form """
    GLM = auto()
    """ If it fits exponential family responses by PIRLS """


class EstimatorFeature(Flag):
    NONE = auto()
    """ Estimator has no features """
    SMOOTH = auto()
    """ If the model carries a spatial smooth """
    UNPENALIZED = auto()
    """ If it supports the unpenalized (fx) variant """
    COVARIATE_SMOOTH = auto()
    """ If covariates are smoothed on space with their own λ_x """
    LINEAR_FORM = auto()
    """ If it exposes its linear representation in y """


@dataclass(frozen=True)
class ModelTag:
    kind: str
    penalized: bool = True

    def __str__(self):
        if self.penalized:
            return self.kind
        return f'{self.kind}_fx'

    @classmethod
    def parse(cls, tag: str) -> 'ModelTag':
        if tag.endswith('_fx'):
            return cls(tag[:-3], penalized=False)
        return cls(tag)


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    y: np.ndarray
    covariates: np.ndarray
    """ n×q covariate matrix, without intercept """
    basis: TpsBasis
    names: tuple[str, ...] = ()
    intercept: bool = True
    penalized: bool = True
    lam: float | None = None
    """ Fixed smoothing parameter of the main fit, GCV when None """
    lam_x: float | tuple[float, ...] | None = None
    """ Fixed smoothing parameter(s) of the covariate regressions, GCV when None """
    grid_size: int = LAMBDA_GRID_SIZE

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'covariates', covariates)
        if not self.names:
            object.__setattr__(self, 'names', tuple(f'x{j + 1}' for j in range(covariates.shape[1])))

        if y.size != self.basis.n or covariates.shape[0] != self.basis.n:
            raise SpatialError(
                ErrorCode.INVALID_INPUT,
                f'Inconsistent sizes: y has {y.size}, covariates {covariates.shape[0]}, locations {self.basis.n}'
            )
        if len(self.names) != covariates.shape[1]:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'One name per covariate column is required')
        if covariates.shape[1] == 0:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'At least one covariate is required')
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(covariates))):
            raise SpatialError(ErrorCode.INVALID_INPUT, 'Response and covariates must be finite')
        for lam in self.lambdas_x() + ((self.lam,) if self.lam is not None else ()):
            if lam is not None and not lam > 0:
                raise SpatialError(ErrorCode.NON_POSITIVE_LAMBDA, f'Smoothing parameters must be positive, got {lam}')

        s = np.linalg.svd(self.X, compute_uv=False)
        if s.min() <= COLLINEAR_TOL * s.max():
            raise SpatialError(ErrorCode.SINGULAR_DESIGN, 'Covariate matrix does not have full column rank')

    @classmethod
    def from_arrays(cls, y, covariates, points, m: int = 2, k: int | None = None, **kwargs) -> 'RegressionProblem':
        """
        Build the locations and the (truncated) basis from raw arrays.

        Args:
            y: Response vector
            covariates: Covariate vector or matrix
            points: n×d coordinates
            m: Order of the penalty
            k: Basis rank, full rank when None
        """
        basis = build_basis(LocationSet(points), m)
        if k is not None and k < basis.n:
            basis = truncate_basis(basis, k)
        return cls(y=y, covariates=covariates, basis=basis, **kwargs)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def locations(self) -> LocationSet:
        return self.basis.locations

    @property
    def X(self) -> np.ndarray:
        """ Design of the linear part, intercept first when present """
        if self.intercept:
            return np.column_stack([np.ones(self.n), self.covariates])
        return self.covariates

    @property
    def x_names(self) -> tuple[str, ...]:
        if self.intercept:
            return ('(Intercept)',) + tuple(self.names)
        return tuple(self.names)

    @cached_property
    def operator(self) -> SmootherOperator:
        """ Smoother of the basis, polynomial space included """
        return spectral_decompose(self.basis)

    @property
    def smooth_operator(self) -> SmootherOperator:
        """ Smoother of the spatial term of the main fit """
        if self.intercept:
            return self.operator.without_constant()
        return self.operator

    def lambdas_x(self) -> tuple:
        q = self.covariates.shape[1]
        if self.lam_x is None:
            return (None,) * q
        if np.isscalar(self.lam_x):
            return (float(self.lam_x),) * q
        if len(self.lam_x) != q:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'Expected {q} covariate smoothing parameters')
        return tuple(self.lam_x)

    def with_response(self, y) -> 'RegressionProblem':
        return self.replace(y=y)

    def replace(self, **changes) -> 'RegressionProblem':
        problem = replace(self, **changes)
        if 'basis' not in changes and 'operator' in self.__dict__:
            problem.__dict__['operator'] = self.operator
        return problem


@dataclass(frozen=True, eq=False)
class FitResult:
    model_tag: ModelTag
    names: tuple[str, ...]
    beta_hat: np.ndarray
    se_beta: np.ndarray
    p_values: np.ndarray
    f_hat: np.ndarray
    fitted: np.ndarray
    edf: float
    sigma_hat: float
    gcv: float
    aic: float
    deviance_explained: float
    lambdas: dict = field(default_factory=dict)
    comparable: bool = True
    """ False when AIC and deviance are not on the scale of the other models """
    family: str = 'gaussian'
    converged: bool = True
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'deviance_explained', float(np.clip(self.deviance_explained, 0.0, 1.0)))

    def beta(self, name: str) -> float:
        return float(self.beta_hat[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.se_beta[self.names.index(name)])

    def to_dict(self) -> dict:
        """JSON friendly summary, per-site vectors excluded"""
        return {
            'model': str(self.model_tag),
            'family': self.family,
            'coefficients': [
                {'name': name, 'estimate': float(b), 'se': float(s), 'p_value': float(p)}
                for name, b, s, p in zip(self.names, self.beta_hat, self.se_beta, self.p_values)
            ],
            'edf': float(self.edf),
            'sigma_hat': float(self.sigma_hat),
            'gcv': float(self.gcv),
            'aic': float(self.aic),
            'deviance_explained': float(self.deviance_explained),
            'comparable': self.comparable,
            'lambdas': {key: float(value) for key, value in self.lambdas.items()},
            'converged': self.converged,
            'iterations': self.iterations,
        }


@dataclass(frozen=True, eq=False)
class LinearForm:
    """
    Linear representation of a Gaussian estimator for fixed covariates and
    smoothing parameters: β̂ = beta_map·y, f̂ = f_operator(y), ŷ = fitted_operator(y).
    """
    beta_map: np.ndarray
    f_operator: Callable[[np.ndarray], np.ndarray]
    fitted_operator: Callable[[np.ndarray], np.ndarray]

    def beta_moments(self, mean_y, sigma: float) -> tuple[np.ndarray, np.ndarray]:
        """E(β̂) and Var(β̂) under y ~ N(mean_y, σ²I)"""
        mean = self.beta_map @ np.asarray(mean_y, dtype=float)
        variance = sigma ** 2 * np.sum(self.beta_map ** 2, axis=1)
        return mean, variance


class BaseEstimator:
    name = ''
    """ Module name for code use, like model tags """
    prettyname = ''
    """ Module name for reports """
    capabilities: EstimatorCapability | None = None
    """ Estimator capabilities, gaussian, glm """
    features: EstimatorFeature = EstimatorFeature.NONE
    """ Estimator features """

    def tag(self, problem: RegressionProblem) -> ModelTag:
        smooth = EstimatorFeature.SMOOTH in self.features
        return ModelTag(self.name, penalized=problem.penalized or not smooth)

    """
    Estimators API methods
    """

    def fit(self, problem: RegressionProblem) -> FitResult:
        """
        Fit the Gaussian response model.

        Args:
            problem: Response, covariates, basis and smoothing options
        """
        raise NotImplementedError()

    def fit_glm(self, problem: RegressionProblem, family) -> FitResult:
        """
        Fit the exponential family model by PIRLS.

        Args:
            problem: Response, covariates, basis and smoothing options
            family: ExponentialFamily instance
        """
        raise NotImplementedError()

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        """
        Linear representation in y at fixed smoothing parameters.

        Args:
            problem: Covariates and basis, the response is ignored
            lambdas: Smoothing parameters as reported in FitResult.lambdas
        """
        raise NotImplementedError()

    """
    Helpers shared by the estimators
    """

    @staticmethod
    def ols(X, y) -> tuple[np.ndarray, np.ndarray]:
        """Least squares coefficients and (XᵀX)⁻¹"""
        X = np.asarray(X, dtype=float)
        Q, R = linalg.qr(X, mode='economic')
        diag = np.abs(np.diag(R))
        if diag.min() <= COLLINEAR_TOL * diag.max():
            raise SpatialError(ErrorCode.SINGULAR_DESIGN, 'Design matrix does not have full column rank')
        beta = linalg.solve_triangular(R, Q.T @ y)
        R_inv = linalg.solve_triangular(R, np.eye(R.shape[0]))
        return beta, R_inv @ R_inv.T

    @staticmethod
    def wald(beta, covariance) -> tuple[np.ndarray, np.ndarray]:
        """Standard errors and two sided normal p-values"""
        se = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
        with np.errstate(divide='ignore', invalid='ignore'):
            p_values = 2 * stats.norm.sf(np.abs(beta / se))
        return se, p_values

    @staticmethod
    def gaussian_aic(rss: float, n: int, edf: float) -> float:
        """2·edf − 2ℓ with ℓ the Gaussian log-likelihood at σ̂²_MLE = RSS/n"""
        sigma2 = max(rss / n, np.finfo(float).tiny)
        loglik = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1)
        return 2 * edf - 2 * loglik

    @staticmethod
    def deviance_explained(y, rss: float) -> float:
        y = np.asarray(y, dtype=float)
        tss = float(np.sum((y - y.mean()) ** 2))
        if tss <= 0:
            return 0.0
        return 1.0 - rss / tss

    def gaussian_result(self, problem: RegressionProblem, *, names, beta, covariance, f_hat, fitted, edf,
                        lambdas=None, comparable=True, y=None, extra=None) -> FitResult:
        """Assemble a FitResult with the Gaussian diagnostics"""
        y = problem.y if y is None else y
        n = y.size
        residuals = y - fitted
        rss = float(residuals @ residuals)
        dof = n - edf
        if dof <= 0:
            raise SpatialError(ErrorCode.DEGENERATE_DENOMINATOR, f'Model uses {edf:.4g} degrees of freedom for n={n}')
        se, p_values = self.wald(beta, covariance)
        return FitResult(
            model_tag=self.tag(problem),
            names=tuple(names),
            beta_hat=np.asarray(beta, dtype=float),
            se_beta=se,
            p_values=p_values,
            f_hat=np.asarray(f_hat, dtype=float),
            fitted=np.asarray(fitted, dtype=float),
            edf=float(edf),
            sigma_hat=float(np.sqrt(rss / dof)),
            gcv=n * rss / dof ** 2,
            aic=self.gaussian_aic(rss, n, edf),
            deviance_explained=self.deviance_explained(y, rss),
            lambdas=dict(lambdas or {}),
            comparable=comparable,
            extra=dict(extra or {}),
        )


def mse_fitted(fit: FitResult, truth) -> float:
    """
    Squared distance of the fitted values from the true mean, ‖ŷ − (βx + f)‖².

    Args:
        fit: Any fit, gSEM included (its fitted values are f̂^y + r̂^y)
        truth: True mean at the locations
    """
    diff = np.asarray(fit.fitted, dtype=float) - np.asarray(truth, dtype=float)
    return float(diff @ diff)
