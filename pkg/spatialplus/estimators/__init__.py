# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import importlib
import logging
import pkgutil

from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators.base import (  # noqa
    EstimatorCapability, EstimatorFeature, FitResult, LinearForm, ModelTag, RegressionProblem, mse_fitted
)
from spatialplus.estimators import modules

MODULES = {}
GAUSSIAN = {}
GLM = {}
for _importer, modname, _ispkg in pkgutil.iter_modules(modules.__path__):
    try:
        modclass = importlib.import_module('spatialplus.estimators.modules.' + modname).Estimator
        MODULES[modclass.name] = modclass
        if modclass.capabilities:
            if EstimatorCapability.GAUSSIAN in modclass.capabilities:
                GAUSSIAN[modclass.name] = modclass
            if EstimatorCapability.GLM in modclass.capabilities:
                GLM[modclass.name] = modclass
    except Exception as exc:
        logging.warning(f'Could not load the {modname} estimator: {exc}')


def get_estimator(name: str, glm: bool = False):
    """
    Instantiate an estimator by module name.

    Args:
        name: Model kind, without the _fx suffix
        glm: If the estimator must support exponential family responses
    """
    registry = GLM if glm else GAUSSIAN
    if name not in registry:
        available = ', '.join(sorted(registry))
        kind = 'GLM' if glm else 'Gaussian'
        raise SpatialError(ErrorCode.INVALID_INPUT, f'No {kind} estimator named {name!r}, available: {available}')
    return registry[name]()


def fit_model(tag: str | ModelTag, problem: RegressionProblem, family=None) -> FitResult:
    """
    Fit a model given its tag, e.g. 'spatial_plus' or 'spatial_fx'.

    The _fx suffix switches the smoothing penalties off. Passing a family,
    gaussian included, fits the model by PIRLS.
    """
    if isinstance(tag, str):
        tag = ModelTag.parse(tag)
    if not tag.penalized:
        problem = problem.replace(penalized=False)
    estimator = get_estimator(tag.kind, glm=family is not None)
    if family is None:
        return estimator.fit(problem)
    return estimator.fit_glm(problem, family)


def fit_null(problem: RegressionProblem) -> FitResult:
    return fit_model('null', problem)


def fit_spatial(problem: RegressionProblem) -> FitResult:
    return fit_model('spatial', problem)


def fit_rsr(problem: RegressionProblem) -> FitResult:
    return fit_model('rsr', problem)


def fit_gsem(problem: RegressionProblem) -> FitResult:
    return fit_model('gsem', problem)


def fit_spatial_plus(problem: RegressionProblem) -> FitResult:
    return fit_model('spatial_plus', problem)


def fit_partial_residual(problem: RegressionProblem, common_lambda: float | None = None) -> FitResult:
    estimator = get_estimator('partial_residual')
    return estimator.fit(problem, common_lambda)
