# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import logging

import numpy as np

from spatialplus.estimators.base import EstimatorCapability, EstimatorFeature, FitResult, LinearForm, RegressionProblem
from spatialplus.estimators.penalized import PenalizedEstimator
from spatialplus.smoothing import PenalizedLeastSquares, lambda_grid


class Estimator(PenalizedEstimator):
    """
    Restricted spatial regression: the spatial basis is replaced by its
    projection on the orthogonal complement of the covariates,
    B̃ = (I − X(XᵀX)⁻¹Xᵀ)B, so β̂ is the least squares estimate of the null model.
    """
    name = 'rsr'
    prettyname = 'Restricted spatial regression'
    capabilities = EstimatorCapability.GAUSSIAN | EstimatorCapability.GLM
    features = EstimatorFeature.SMOOTH | EstimatorFeature.UNPENALIZED | EstimatorFeature.LINEAR_FORM

    @staticmethod
    def restricted_basis(problem: RegressionProblem):
        X = problem.X
        op = problem.smooth_operator
        beta, _ = PenalizedEstimator.ols(X, op.phi)
        return op.phi - X @ beta, op.mu

    def fit(self, problem: RegressionProblem) -> FitResult:
        X = problem.X
        p = X.shape[1]
        beta, xtx_inv = self.ols(X, problem.y)
        resid = problem.y - X @ beta

        basis, mu = self.restricted_basis(problem)
        if not problem.penalized:
            self.check_unpenalized(problem, problem.smooth_operator, p)
        pls = PenalizedLeastSquares(basis, np.diag(mu), resid)
        if not problem.penalized:
            lam = 0.0
        elif problem.lam is not None:
            lam = float(problem.lam)
        else:
            lam = pls.select(lambda_grid(problem.smooth_operator, problem.grid_size), extra_edf=p)
        logging.debug(f'rsr: λ={lam:.4e}')

        f_hat = pls.fitted(lam)
        edf = p + pls.edf(lam)
        rss = pls.rss(lam)
        sigma2 = rss / (problem.n - edf)
        return self.gaussian_result(
            problem, names=problem.x_names, beta=beta, covariance=sigma2 * xtx_inv,
            f_hat=f_hat, fitted=X @ beta + f_hat, edf=edf, lambdas={'lambda': lam},
        )

    def fit_glm(self, problem, family):
        from spatialplus.glm.models import fit_glm_rsr
        return fit_glm_rsr(problem, family)

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        X = problem.X
        _, xtx_inv = self.ols(X, problem.y)
        beta_map = xtx_inv @ X.T
        basis, mu = self.restricted_basis(problem)
        lam = lambdas['lambda']
        smoother = np.linalg.solve(basis.T @ basis + lam * np.diag(mu), basis.T)

        def f_operator(y):
            return basis @ (smoother @ y)

        def fitted_operator(y):
            return X @ (beta_map @ y) + f_operator(y)

        return LinearForm(beta_map=beta_map, f_operator=f_operator, fitted_operator=fitted_operator)
