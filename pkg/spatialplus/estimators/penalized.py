# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import logging

import numpy as np

from spatialplus.define import DEGENERATE_RESIDUAL_TOL
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators.base import BaseEstimator, RegressionProblem
from spatialplus.smoothing import SmootherOperator, lambda_grid, partial_spline, select_lambda


class PenalizedEstimator(BaseEstimator):
    """Base class for estimators needing smoothing helpers"""

    @staticmethod
    def check_unpenalized(problem: RegressionProblem, op: SmootherOperator, p: int):
        if op.k + p >= problem.n:
            raise SpatialError(
                ErrorCode.SINGULAR_DESIGN,
                f'Unpenalized smooth of rank {op.k} plus {p} covariates saturates n={problem.n}, truncate the basis'
            )

    @staticmethod
    def main_lambda(problem: RegressionProblem, op: SmootherOperator, y, X=None) -> float:
        """
        Smoothing parameter of a fit: 0 when unpenalized, the fixed value when
        given, otherwise GCV on the model being fitted.

        Args:
            problem: Regression problem with the smoothing options
            op: Smoother of the fit
            y: Response of the fit
            X: Covariates of the fit, None for a smoother-only regression
        """
        if not problem.penalized:
            return 0.0
        if problem.lam is not None:
            return float(problem.lam)
        return select_lambda(op, y, lambda_grid(op, problem.grid_size), X=X)

    @staticmethod
    def covariate_lambdas(problem: RegressionProblem, op: SmootherOperator) -> list[float]:
        """Smoothing parameter of each covariate's regression on space"""
        if not problem.penalized:
            return [0.0] * problem.covariates.shape[1]
        lambdas = []
        grid = lambda_grid(op, problem.grid_size)
        for column, fixed in zip(problem.covariates.T, problem.lambdas_x()):
            lambdas.append(float(fixed) if fixed is not None else select_lambda(op, column, grid))
        return lambdas

    @staticmethod
    def spatial_residuals(problem: RegressionProblem, op: SmootherOperator, lambdas) -> tuple[np.ndarray, np.ndarray]:
        """
        Residuals r^x = (I − S_{λx})x and fitted trends f̂^x of every covariate.
        """
        trends = np.column_stack([op.apply(column, lam) for column, lam in zip(problem.covariates.T, lambdas)])
        return problem.covariates - trends, trends

    @staticmethod
    def check_residuals(problem: RegressionProblem, op: SmootherOperator, residuals):
        """
        Refuse covariates that are (numerically) spatial: ‖r^x‖/‖x‖ below
        tolerance, or x inside the span of a truncated basis.
        """
        for name, column, resid in zip(problem.names, problem.covariates.T, residuals.T):
            norm = np.linalg.norm(column)
            outside = column - op.apply(column, 0.0)
            if np.linalg.norm(resid) <= DEGENERATE_RESIDUAL_TOL * norm or (
                op.k < op.n and np.linalg.norm(outside) <= DEGENERATE_RESIDUAL_TOL * norm
            ):
                raise SpatialError(
                    ErrorCode.DEGENERATE_RESIDUALS, f'Covariate {name} lies in the spatial column space'
                )

    def partial_fit(self, problem: RegressionProblem, X, names, lambdas: dict, extra=None, f_adjust=None):
        """
        Fit y = Xβ + f at the main λ and assemble the result.

        The covariance of β̂ = (Xᵀ(I−S)X)⁻¹Xᵀ(I−S)y is σ̂²G Xᵀ(I−S)²X G.
        """
        op = problem.smooth_operator
        lam = lambdas['lambda']
        fit = partial_spline(op, X, problem.y, lam)
        covariance_unit = fit.gram_inv @ (fit.resid_x.T @ fit.resid_x) @ fit.gram_inv
        sigma2 = fit.rss / (problem.n - fit.edf)
        f_hat = fit.f_hat if f_adjust is None else fit.f_hat - f_adjust(fit.beta)
        logging.debug(f'{self.name}: λ={lam:.4e}, edf={fit.edf:.2f}')
        return self.gaussian_result(
            problem, names=names, beta=fit.beta, covariance=sigma2 * covariance_unit,
            f_hat=f_hat, fitted=fit.fitted, edf=fit.edf, lambdas=lambdas, extra=extra,
        )

    @staticmethod
    def partial_maps(op: SmootherOperator, X, lam: float):
        """Linear maps y ↦ β̂, y ↦ f̂ and y ↦ ŷ of the partial spline fit"""
        resid_x = X - op.apply(X, lam)
        gram_inv = np.linalg.inv(X.T @ resid_x)
        beta_map = gram_inv @ resid_x.T

        def f_operator(y):
            return op.apply(y - X @ (beta_map @ y), lam)

        def fitted_operator(y):
            return X @ (beta_map @ y) + f_operator(y)

        return beta_map, f_operator, fitted_operator
