# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

from spatialplus.estimators.base import EstimatorCapability, EstimatorFeature, FitResult, LinearForm, RegressionProblem
from spatialplus.estimators.penalized import PenalizedEstimator


class Estimator(PenalizedEstimator):
    """
    Partial thin plate spline model y = Xβ + f(t) + ε.

    β̂ = (Xᵀ(I−S_λ)X)⁻¹Xᵀ(I−S_λ)y and f̂ = S_λ(y − Xβ̂), λ by GCV on the whole
    model. Without penalty this is least squares on [X | B].
    """
    name = 'spatial'
    prettyname = 'Spatial model'
    capabilities = EstimatorCapability.GAUSSIAN | EstimatorCapability.GLM
    features = EstimatorFeature.SMOOTH | EstimatorFeature.UNPENALIZED | EstimatorFeature.LINEAR_FORM

    def fit(self, problem: RegressionProblem) -> FitResult:
        op = problem.smooth_operator
        X = problem.X
        if not problem.penalized:
            self.check_unpenalized(problem, op, X.shape[1])
        lam = self.main_lambda(problem, op, problem.y, X)
        return self.partial_fit(problem, X, problem.x_names, {'lambda': lam})

    def fit_glm(self, problem, family):
        from spatialplus.glm.models import fit_glm_spatial
        return fit_glm_spatial(problem, family)

    def linear_form(self, problem: RegressionProblem, lambdas: dict) -> LinearForm:
        beta_map, f_operator, fitted_operator = self.partial_maps(problem.smooth_operator, problem.X, lambdas['lambda'])
        return LinearForm(beta_map=beta_map, f_operator=f_operator, fitted_operator=fitted_operator)
