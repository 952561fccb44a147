# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np

from spatialplus.estimators.base import (
    BaseEstimator, EstimatorCapability, EstimatorFeature, FitResult, LinearForm, RegressionProblem
)


class Estimator(BaseEstimator):
    name = 'null'
    prettyname = 'Null model'
    capabilities = EstimatorCapability.GAUSSIAN | EstimatorCapability.GLM
    features = EstimatorFeature.LINEAR_FORM

    def fit(self, problem: RegressionProblem) -> FitResult:
        X = problem.X
        beta, xtx_inv = self.ols(X, problem.y)
        fitted = X @ beta
        resid = problem.y - fitted
        p = X.shape[1]
        sigma2 = float(resid @ resid) / (problem.n - p)
        return self.gaussian_result(
            problem, names=problem.x_names, beta=beta, covariance=sigma2 * xtx_inv,
            f_hat=np.zeros(problem.n), fitted=fitted, edf=p,
        )

    def fit_glm(self, problem, family):
        from spatialplus.glm.models import fit_glm_null
        return fit_glm_null(problem, family)

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        X = problem.X
        _, xtx_inv = self.ols(X, problem.y)
        beta_map = xtx_inv @ X.T

        def f_operator(y):
            return np.zeros_like(np.asarray(y, dtype=float))

        def fitted_operator(y):
            return X @ (beta_map @ y)

        return LinearForm(beta_map=beta_map, f_operator=f_operator, fitted_operator=fitted_operator)
