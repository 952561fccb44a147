# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np
import pytest

from spatialplus.estimators import RegressionProblem


def confounded_sample(rng, n=50, d=2, noise_x=0.3, noise_y=0.5, beta=3.0):
    """Locations, covariate and response with a shared spatial trend"""
    points = rng.uniform(size=(n, d))
    trend = np.sin(2 * np.pi * points[:, 0]) + np.cos(np.pi * points[:, -1])
    x = trend + noise_x * rng.standard_normal(n)
    y = beta * x - trend + noise_y * rng.standard_normal(n)
    return points, x, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def sample(rng):
    return confounded_sample(rng)


@pytest.fixture
def problem(sample):
    points, x, y = sample
    return RegressionProblem.from_arrays(y, x, points, names=('x',))


@pytest.fixture
def truncated_problem(rng):
    points, x, y = confounded_sample(rng, n=60)
    return RegressionProblem.from_arrays(y, x, points, k=20, names=('x',))


@pytest.fixture
def make_sample():
    return confounded_sample
