# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

from enum import Enum, auto


class ErrorCode(Enum):
    UNEXPECTED = auto()
    INVALID_INPUT = auto()
    PARSE_ERROR = auto()
    # Basis construction
    DUPLICATE_POINTS = auto()
    RANK_DEFICIENT_POLYNOMIAL_BLOCK = auto()
    ORDER_TOO_SMALL = auto()
    RANK_OUT_OF_RANGE = auto()
    # Smoothing
    EIGEN_FAILURE = auto()
    NON_POSITIVE_LAMBDA = auto()
    DEGENERATE_DENOMINATOR = auto()
    # Estimators
    SINGULAR_DESIGN = auto()
    COLLINEAR_COVARIATE_WITH_NULLSPACE = auto()
    DEGENERATE_RESIDUALS = auto()
    # GLM
    INVALID_RESPONSE = auto()
    PIRLS_DIVERGENCE = auto()
    STEP_HALVING_EXHAUSTED = auto()
    MEAN_OUT_OF_RANGE = auto()
    # Random fields
    COVARIANCE_NOT_PSD = auto()
    # Studies and lab
    ACCEPTANCE_FAILED = auto()


CONVERGENCE_ERRORS = frozenset({
    ErrorCode.EIGEN_FAILURE,
    ErrorCode.PIRLS_DIVERGENCE,
    ErrorCode.STEP_HALVING_EXHAUSTED,
})


class SpatialError(Exception):
    """Error raised when a basis, smoother or model cannot be built or fitted"""

    def __init__(self, code: ErrorCode, message: str = '') -> None:
        self.code = code  # Serves for quick error matching
        self.message = message  # More detailed error info if needed
        super().__init__(message)

    def __str__(self):
        if self.message:
            return f'{self.code.name}: {self.message}'
        return self.code.name

    @property
    def is_convergence(self) -> bool:
        return self.code in CONVERGENCE_ERRORS
