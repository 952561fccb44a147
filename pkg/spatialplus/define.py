# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

PACKAGE = 'spatialplus'
VERSION = '0.1.0'
PROFILE = 'default'
""" 'development' turns on debug logging """

SCHEMA_VERSION = 1
""" Version of the JSON reports layout """

# Numerical tolerances, all relative
ZERO_TOL = 1e-8
EIGEN_CLAMP = 1e-8
DEGENERATE_RESIDUAL_TOL = 1e-6
COLLINEAR_TOL = 1e-10

# Smoothing parameter search
LAMBDA_GRID_SIZE = 30
LAMBDA_GRID_LOWER = 1e-4
LAMBDA_GRID_UPPER = 1e4

# PIRLS
PIRLS_MAX_ITER = 50
PIRLS_TOL = 1e-8
PIRLS_MAX_HALVINGS = 10

# Covariance factorization
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

# Studies
MAX_FAILURE_RATE = 0.05
DEFAULT_SEED = 20240101
