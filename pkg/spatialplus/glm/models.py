# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import logging

import numpy as np
from scipy import linalg

from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators.base import BaseEstimator, FitResult, ModelTag, RegressionProblem
from spatialplus.estimators.penalized import PenalizedEstimator
from spatialplus.glm.families import ExponentialFamily
from spatialplus.glm.pirls import PirlsFit, run_pirls
from spatialplus.smoothing import PenalizedLeastSquares, lambda_grid


def _smooth_terms(problem: RegressionProblem, X):
    """Model matrix [X | B_sp] and its block penalty"""
    op = problem.smooth_operator
    p = X.shape[1]
    Z = np.hstack([X, op.phi])
    P = np.zeros((Z.shape[1], Z.shape[1]))
    P[p:, p:] = np.diag(op.mu)
    return Z, P


def _fit_smooth(problem: RegressionProblem, family: ExponentialFamily, X, basis=None) -> tuple[PirlsFit, np.ndarray]:
    op = problem.smooth_operator
    p = X.shape[1]
    Z, P = _smooth_terms(problem, X)
    if basis is not None:
        Z[:, p:] = basis
    if not problem.penalized:
        PenalizedEstimator.check_unpenalized(problem, op, p)
        return run_pirls(problem.y, family, Z, P, lam=0.0), Z
    grid = lambda_grid(op, problem.grid_size)
    return run_pirls(problem.y, family, Z, P, lam=problem.lam, grid=grid), Z


def _glm_result(problem: RegressionProblem, family: ExponentialFamily, fit: PirlsFit, Z, kind: str, names,
                f_hat=None, lambdas=None, extra=None) -> FitResult:
    y = problem.y
    p = len(names)
    beta = fit.coefficients[:p]
    se, p_values = BaseEstimator.wald(beta, fit.covariance[:p, :p])
    mu = fit.state.mu
    if f_hat is None:
        f_hat = Z[:, p:] @ fit.coefficients[p:]
    null_deviance = family.deviance(y, np.full(y.size, y.mean()))
    explained = 1.0 - fit.deviance / null_deviance if null_deviance > 0 else 0.0
    penalized = problem.penalized or Z.shape[1] == p
    return FitResult(
        model_tag=ModelTag(kind, penalized=penalized),
        names=tuple(names),
        beta_hat=beta,
        se_beta=se,
        p_values=p_values,
        f_hat=f_hat,
        fitted=mu,
        edf=fit.edf,
        sigma_hat=float(np.sqrt(fit.scale)),
        gcv=fit.gcv,
        aic=2 * fit.edf - 2 * family.loglik(y, mu, fit.scale),
        deviance_explained=explained,
        lambdas=dict(lambdas or {'lambda': fit.lam}),
        family=family.name,
        converged=fit.converged,
        iterations=fit.iterations,
        extra={'monotone': fit.monotone, 'deviance': fit.deviance, **(extra or {})},
    )


def fit_glm_null(problem: RegressionProblem, family: ExponentialFamily) -> FitResult:
    """
    Exponential family regression on the covariates alone.

    Args:
        problem: Response and covariates, the basis is unused
        family: Response family
    """
    fit = run_pirls(problem.y, family, problem.X)
    return _glm_result(problem, family, fit, problem.X, 'null', problem.x_names, f_hat=np.zeros(problem.n))


def fit_glm_spatial(problem: RegressionProblem, family: ExponentialFamily) -> FitResult:
    """
    Generalized spatial model g(μ) = Xβ + f(t), minimizing the penalized
    working least squares ‖√W(z − Xβ − f)‖² + λ fᵀ(nΓ)f at convergence.

    Args:
        problem: Response, covariates, basis and smoothing options
        family: Response family
    """
    fit, Z = _fit_smooth(problem, family, problem.X)
    return _glm_result(problem, family, fit, Z, 'spatial', problem.x_names)


def weighted_residuals(problem: RegressionProblem, weights) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """
    Residuals of the W-weighted thin plate regressions of every covariate on
    space, ‖√W(x − f^x)‖² + λ_x f^xᵀ(nΓ)f^x, with λ_x by weighted GCV.
    """
    op = problem.operator
    penalty = np.diag(op.mu)
    grid = lambda_grid(op, problem.grid_size, scale=float(np.mean(weights)))
    residuals, trends, lambdas = [], [], []
    for column, fixed in zip(problem.covariates.T, problem.lambdas_x()):
        pls = PenalizedLeastSquares(op.phi, penalty, column, weights)
        if not problem.penalized:
            lam = 0.0
        elif fixed is not None:
            lam = float(fixed)
        else:
            lam = pls.select(grid)
        trend = pls.fitted(lam)
        trends.append(trend)
        residuals.append(column - trend)
        lambdas.append(lam)
    return np.column_stack(residuals), np.column_stack(trends), lambdas


def weighted_orthogonality(residuals, basis, weights) -> float:
    """Largest |cos| between √W r^x and the √W-scaled basis columns"""
    sw = np.sqrt(weights)
    r = residuals * sw[:, None]
    b = basis * sw[:, None]
    cosines = (r.T @ b) / np.outer(np.linalg.norm(r, axis=0), np.linalg.norm(b, axis=0))
    return float(np.max(np.abs(cosines)))


def fit_glm_spatial_plus(problem: RegressionProblem, family: ExponentialFamily) -> FitResult:
    """
    Generalized spatial+.

    The weights W of the converged generalized spatial model are frozen while
    each covariate is residualized by a W-weighted thin plate regression,
    then the model g(μ) = r^xβ + f⁺ is fitted by PIRLS.

    Args:
        problem: Response, covariates, basis and smoothing options
        family: Response family
    """
    base, _ = _fit_smooth(problem, family, problem.X)
    weights = base.state.w
    resid_x, trends, lambdas_x = weighted_residuals(problem, weights)
    PenalizedEstimator.check_residuals(problem, problem.operator, resid_x)

    op = problem.operator
    # The weighted fit leaves exact orthogonality on the unpenalized columns only
    checked = op.phi if not problem.penalized else op.phi[:, op.mu == 0]
    orthogonality = weighted_orthogonality(resid_x, checked, weights)
    logging.debug(f'Generalized spatial+: weighted |cos| against unpenalized columns {orthogonality:.2e}')

    R = np.column_stack([np.ones(problem.n), resid_x]) if problem.intercept else resid_x
    fit, Z = _fit_smooth(problem, family, R)
    q = resid_x.shape[1]
    p = R.shape[1]
    f_hat = Z[:, p:] @ fit.coefficients[p:] - trends @ fit.coefficients[p - q:p]

    lambdas = {'lambda': fit.lam}
    lambdas.update({f'lambda_x[{name}]': value for name, value in zip(problem.names, lambdas_x)})
    return _glm_result(
        problem, family, fit, Z, 'spatial_plus', problem.x_names, f_hat=f_hat, lambdas=lambdas,
        extra={'weighted_orthogonality': orthogonality, 'residualized': resid_x, 'base_lambda': base.lam},
    )


def fit_glm_rsr(problem: RegressionProblem, family: ExponentialFamily) -> FitResult:
    """
    Generalized restricted spatial regression.

    The spatial basis is W-orthogonalized against the covariates at the
    weights of the converged generalized spatial model,
    B̃ = (I − X(XᵀWX)⁻¹XᵀW)B, and the model is refitted.

    Args:
        problem: Response, covariates, basis and smoothing options
        family: Response family
    """
    base, _ = _fit_smooth(problem, family, problem.X)
    weights = base.state.w
    X = problem.X
    basis = problem.smooth_operator.phi
    xtw = X.T * weights
    restricted = basis - X @ linalg.solve(xtw @ X, xtw @ basis, assume_a='pos')
    cross = np.max(np.abs(xtw @ restricted)) / max(np.max(np.abs(xtw @ basis)), np.finfo(float).tiny)

    fit, Z = _fit_smooth(problem, family, X, basis=restricted)
    return _glm_result(
        problem, family, fit, Z, 'rsr', problem.x_names,
        extra={'weighted_cross_product': cross, 'base_lambda': base.lam},
    )


def simulate_glm_response(eta, family: ExponentialFamily, rng: np.random.Generator) -> np.ndarray:
    """
    Draw independent responses with means μ = g⁻¹(η).

    Args:
        eta: Linear predictor
        family: Response family
        rng: Random generator
    """
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise SpatialError(ErrorCode.INVALID_INPUT, 'Linear predictor is not finite')
    mu = family.inverse_link(eta)
    if not family.valid_mu(mu):
        raise SpatialError(ErrorCode.MEAN_OUT_OF_RANGE, f'Means outside the valid {family.name} range')
    return family.sample(mu, rng)
