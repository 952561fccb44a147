# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

from dataclasses import replace

import numpy as np

from spatialplus.estimators.base import EstimatorCapability, EstimatorFeature, FitResult, LinearForm, RegressionProblem
from spatialplus.estimators.penalized import PenalizedEstimator


class Estimator(PenalizedEstimator):
    """
    Geoadditive structural equation model.

    The spatial trends of the response and of every covariate are removed by
    separate thin plate regressions, r^y = (I − S_{λy})y and
    r^x = (I − S_{λx})x, then r^y is regressed on r^x by least squares. AIC
    and deviance refer to the residual regression and are flagged as not
    comparable with the other models.
    """
    name = 'gsem'
    prettyname = 'gSEM'
    capabilities = EstimatorCapability.GAUSSIAN
    features = (
        EstimatorFeature.SMOOTH | EstimatorFeature.UNPENALIZED | EstimatorFeature.COVARIATE_SMOOTH
        | EstimatorFeature.LINEAR_FORM
    )

    def fit(self, problem: RegressionProblem) -> FitResult:
        op = problem.operator
        q = problem.covariates.shape[1]
        if not problem.penalized:
            self.check_unpenalized(problem, op, q)
        lambdas_x = self.covariate_lambdas(problem, op)
        resid_x, _ = self.spatial_residuals(problem, op, lambdas_x)
        lam_y = self.main_lambda(problem, op, problem.y)
        trend_y = op.apply(problem.y, lam_y)
        resid_y = problem.y - trend_y

        beta, rtr_inv = self.ols(resid_x, resid_y)
        fitted_resid = resid_x @ beta
        rss = float(np.sum((resid_y - fitted_resid) ** 2))
        sigma2 = rss / (problem.n - q)

        lambdas = {'lambda': lam_y}
        lambdas.update({f'lambda_x[{name}]': lam for name, lam in zip(problem.names, lambdas_x)})
        result = self.gaussian_result(
            problem, names=problem.names, beta=beta, covariance=sigma2 * rtr_inv,
            f_hat=trend_y, fitted=fitted_resid, edf=q, lambdas=lambdas, comparable=False, y=resid_y,
            extra={'residualized': resid_x, 'edf_y': op.trace(lam_y)},
        )
        # Response scale fitted values f̂^y + r̂^y
        return replace(result, fitted=trend_y + fitted_resid)

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        op = problem.operator
        lambdas_x = [lambdas[f'lambda_x[{name}]'] for name in problem.names]
        lam_y = lambdas['lambda']
        resid_x, _ = self.spatial_residuals(problem, op, lambdas_x)
        _, rtr_inv = self.ols(resid_x, problem.y)
        projector = rtr_inv @ resid_x.T

        def beta_of(y):
            y = np.asarray(y, dtype=float)
            return projector @ (y - op.apply(y, lam_y))

        def f_operator(y):
            return op.apply(y, lam_y)

        def fitted_operator(y):
            return f_operator(y) + resid_x @ beta_of(y)

        beta_map = beta_of(np.eye(problem.n))
        return LinearForm(beta_map=beta_map, f_operator=f_operator, fitted_operator=fitted_operator)
