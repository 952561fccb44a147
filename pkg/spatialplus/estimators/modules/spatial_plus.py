# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np

from spatialplus.estimators.base import EstimatorCapability, EstimatorFeature, FitResult, LinearForm, RegressionProblem
from spatialplus.estimators.penalized import PenalizedEstimator


class Estimator(PenalizedEstimator):
    """
    Spatial+ estimator.

    Every covariate is replaced by its residual r^x = (I − S_{λx})x from a
    thin plate regression on space (λ_x by GCV on that regression alone),
    then the partial spline model y = R β + f⁺ + ε is fitted with its own
    GCV λ. The reported spatial effect is f̂⁺ = f̂⁺hat − Σ β̂_j f̂^x_j so that
    it estimates f rather than f + Σ β_j f^x_j.
    """
    name = 'spatial_plus'
    prettyname = 'Spatial+'
    capabilities = EstimatorCapability.GAUSSIAN | EstimatorCapability.GLM
    features = (
        EstimatorFeature.SMOOTH | EstimatorFeature.UNPENALIZED | EstimatorFeature.COVARIATE_SMOOTH
        | EstimatorFeature.LINEAR_FORM
    )

    @staticmethod
    def residual_design(problem: RegressionProblem, resid_x) -> np.ndarray:
        if problem.intercept:
            return np.column_stack([np.ones(problem.n), resid_x])
        return resid_x

    def residualize(self, problem: RegressionProblem):
        """Covariate residuals, fitted trends and λ_x of every covariate"""
        op = problem.operator
        lambdas_x = self.covariate_lambdas(problem, op)
        resid_x, trends = self.spatial_residuals(problem, op, lambdas_x)
        self.check_residuals(problem, op, resid_x)
        return resid_x, trends, lambdas_x

    def fit(self, problem: RegressionProblem) -> FitResult:
        X = problem.X
        if not problem.penalized:
            self.check_unpenalized(problem, problem.smooth_operator, X.shape[1])
        resid_x, trends, lambdas_x = self.residualize(problem)
        R = self.residual_design(problem, resid_x)

        lam = self.main_lambda(problem, problem.smooth_operator, problem.y, R)
        lambdas = {'lambda': lam}
        lambdas.update({f'lambda_x[{name}]': value for name, value in zip(problem.names, lambdas_x)})
        q = resid_x.shape[1]

        def f_adjust(beta):
            return trends @ beta[-q:]

        return self.partial_fit(
            problem, R, problem.x_names, lambdas, f_adjust=f_adjust,
            extra={'residualized': resid_x, 'covariate_trends': trends},
        )

    def fit_glm(self, problem, family):
        from spatialplus.glm.models import fit_glm_spatial_plus
        return fit_glm_spatial_plus(problem, family)

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        op = problem.operator
        lambdas_x = [lambdas[f'lambda_x[{name}]'] for name in problem.names]
        resid_x, trends = self.spatial_residuals(problem, op, lambdas_x)
        R = self.residual_design(problem, resid_x)
        beta_map, f_hat_operator, fitted_operator = self.partial_maps(problem.smooth_operator, R, lambdas['lambda'])
        q = resid_x.shape[1]

        def f_operator(y):
            return f_hat_operator(y) - trends @ (beta_map[-q:] @ y)

        return LinearForm(beta_map=beta_map, f_operator=f_operator, fitted_operator=fitted_operator)


def expanded_beta(problem: RegressionProblem, lam: float, lam_x: float) -> float:
    """
    Single covariate β̂⁺ written in x instead of r^x,
    (xᵀ(I−S_{λx})(I−S_λ)(I−S_{λx})x)⁻¹ xᵀ(I−S_{λx})(I−S_λ)y.
    """
    op = problem.operator
    x = problem.covariates[:, 0]
    y = problem.y

    def residual(v, value):
        return v - op.apply(v, value)

    numerator = x @ residual(residual(y, lam), lam_x)
    denominator = x @ residual(residual(residual(x, lam_x), lam), lam_x)
    return float(numerator / denominator)
