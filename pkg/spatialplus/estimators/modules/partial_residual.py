# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np

from spatialplus.define import COLLINEAR_TOL
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators.base import EstimatorCapability, EstimatorFeature, FitResult, LinearForm, RegressionProblem
from spatialplus.estimators.penalized import PenalizedEstimator
from spatialplus.smoothing import SmootherOperator


class Estimator(PenalizedEstimator):
    """
    Partial residual estimator β̂ = (Xᵀ(I−S_λ)²X)⁻¹Xᵀ(I−S_λ)²y with one λ
    shared by every regression, f̂ = S_λ(y − Xβ̂).
    """
    name = 'partial_residual'
    prettyname = 'Partial residuals'
    capabilities = EstimatorCapability.GAUSSIAN
    features = EstimatorFeature.SMOOTH | EstimatorFeature.UNPENALIZED | EstimatorFeature.LINEAR_FORM

    @staticmethod
    def _maps(op: SmootherOperator, X, lam: float):
        resid_x = X - op.apply(X, lam)
        hessian = resid_x.T @ resid_x
        if np.linalg.eigvalsh(hessian).min() <= COLLINEAR_TOL * np.linalg.eigvalsh(X.T @ X).max():
            raise SpatialError(ErrorCode.COLLINEAR_COVARIATE_WITH_NULLSPACE, 'Covariates are reproduced by the smooth')
        twice = resid_x - op.apply(resid_x, lam)
        beta_map = np.linalg.solve(hessian, twice.T)
        return beta_map, hessian, twice

    def common_lambda(self, problem: RegressionProblem) -> float:
        """The fixed λ when given, else GCV on the smoother-only regression of y"""
        return self.main_lambda(problem, problem.operator, problem.y)

    def fit(self, problem: RegressionProblem, common_lambda: float | None = None) -> FitResult:
        op = problem.operator
        X = problem.covariates
        if not problem.penalized:
            self.check_unpenalized(problem, op, X.shape[1])
        lam = self.common_lambda(problem) if common_lambda is None else float(common_lambda)

        beta_map, hessian, twice = self._maps(op, X, lam)
        beta = beta_map @ problem.y
        f_hat = op.apply(problem.y - X @ beta, lam)
        fitted = X @ beta + f_hat
        # Tr of S + (I−S)X H⁻¹Xᵀ(I−S)²
        edf = op.trace(lam) + float(np.trace(np.linalg.solve(hessian, twice.T @ (X - op.apply(X, lam)))))
        resid = problem.y - fitted
        sigma2 = float(resid @ resid) / (problem.n - edf)
        return self.gaussian_result(
            problem, names=problem.names, beta=beta, covariance=sigma2 * beta_map @ beta_map.T,
            f_hat=f_hat, fitted=fitted, edf=edf, lambdas={'lambda': lam},
        )

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        op = problem.operator
        X = problem.covariates
        lam = lambdas['lambda']
        beta_map, _, _ = self._maps(op, X, lam)

        def f_operator(y):
            return op.apply(y - X @ (beta_map @ y), lam)

        def fitted_operator(y):
            return X @ (beta_map @ y) + f_operator(y)

        return LinearForm(beta_map=beta_map, f_operator=f_operator, fitted_operator=fitted_operator)
