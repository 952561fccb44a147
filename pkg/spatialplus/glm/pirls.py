# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Penalized iteratively re-weighted least squares.

Each iteration solves the working problem ‖√W(z − Zθ)‖² + λθᵀPθ with
pseudodata z = η + g′(μ)(y − μ) and weights w = 1/(g′(μ)²V(μ)), λ chosen
by GCV on that working problem unless fixed.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from spatialplus.define import PIRLS_MAX_HALVINGS, PIRLS_MAX_ITER, PIRLS_TOL
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.glm.families import ExponentialFamily
from spatialplus.smoothing import PenalizedLeastSquares


@dataclass
class PirlsState:
    eta: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    w: np.ndarray
    iteration: int = 0
    converged: bool = False


@dataclass(frozen=True, eq=False)
class PirlsFit:
    coefficients: np.ndarray
    state: PirlsState
    lam: float
    edf: float
    scale: float
    deviance: float
    penalized_deviance: float
    covariance: np.ndarray
    gcv: float
    steps: list = field(default_factory=list)
    """ Penalized deviance before and after each accepted step, at that step's λ """

    @property
    def converged(self) -> bool:
        return self.state.converged

    @property
    def iterations(self) -> int:
        return self.state.iteration

    @property
    def monotone(self) -> bool:
        return all(after <= before + 1e-9 * (1.0 + abs(before)) for before, after in self.steps)


def working_state(family: ExponentialFamily, y, eta, mu, iteration: int = 0) -> PirlsState:
    derivative = family.link_derivative(mu)
    z = eta + derivative * (y - mu)
    w = family.weights(mu)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w)) and np.all(w > 0)):
        raise SpatialError(ErrorCode.PIRLS_DIVERGENCE, f'Non finite working data at iteration {iteration}')
    return PirlsState(eta=eta, mu=mu, z=z, w=w, iteration=iteration)


def run_pirls(y, family: ExponentialFamily, design, penalty=None, lam: float | None = None, grid=None,
              max_iter: int = PIRLS_MAX_ITER, tol: float = PIRLS_TOL,
              max_halvings: int = PIRLS_MAX_HALVINGS) -> PirlsFit:
    """
    Fit g(μ) = Zθ by PIRLS.

    Args:
        y: Response, validated against the family support
        family: Exponential family
        design: n×q model matrix Z
        penalty: q×q penalty P, None for an unpenalized model
        lam: Fixed smoothing parameter, 0 disables the penalty
        grid: Candidate λ values for per-iteration GCV, rescaled by the mean working weight
        max_iter: Iteration limit
        tol: Relative change of the penalized deviance declaring convergence
        max_halvings: Step halvings allowed per iteration
    """
    y = np.asarray(y, dtype=float)
    Z = np.asarray(design, dtype=float)
    family.validate(y)
    q = Z.shape[1]
    P = np.zeros((q, q)) if penalty is None else np.asarray(penalty, dtype=float)
    if penalty is None:
        lam = 0.0
    elif lam is None and grid is None:
        raise SpatialError(ErrorCode.INVALID_INPUT, 'A penalized PIRLS fit needs a fixed λ or a grid')

    def penalized_deviance(theta, value):
        mu = family.inverse_link(Z @ theta)
        if not family.valid_mu(mu):
            return np.inf
        return family.deviance(y, mu) + value * float(theta @ P @ theta)

    mu = family.initial_mu(y)
    eta = family.link(mu)
    theta = None
    frozen = lam
    previous = np.inf
    steps = []
    for iteration in range(1, max_iter + 1):
        state = working_state(family, y, eta, mu, iteration)
        pls = PenalizedLeastSquares(Z, P, state.z, state.w)
        if frozen is not None:
            lam_t = float(frozen)
        else:
            lam_t = pls.select(np.asarray(grid) * np.mean(state.w))
        proposal = pls.coefficients(lam_t)

        current = penalized_deviance(proposal, lam_t)
        if theta is not None:
            before = penalized_deviance(theta, lam_t)
            halvings = 0
            while not current <= before + 1e-12 * abs(before):
                if halvings == max_halvings:
                    raise SpatialError(
                        ErrorCode.STEP_HALVING_EXHAUSTED,
                        f'Penalized deviance kept increasing after {max_halvings} halvings at iteration {iteration}'
                    )
                proposal = (theta + proposal) / 2
                current = penalized_deviance(proposal, lam_t)
                halvings += 1
            if halvings:
                logging.debug(f'PIRLS iteration {iteration}: {halvings} step halvings')
            steps.append((before, current))
        elif not np.isfinite(current):
            raise SpatialError(ErrorCode.PIRLS_DIVERGENCE, 'First PIRLS step leaves the valid mean range')

        theta = proposal
        eta_previous, eta = eta, Z @ theta
        mu = family.inverse_link(eta)
        logging.debug(f'PIRLS iteration {iteration}: penalized deviance {current:.8g}, λ={lam_t:.4e}')
        settled = abs(current - previous) < tol * (0.1 + abs(current))
        # The deviance settles before the coefficients when scoring is not Newton
        if settled and np.max(np.abs(eta - eta_previous)) <= tol * (1.0 + np.max(np.abs(eta))):
            state.converged = True
            break
        if settled and frozen is None:
            frozen = lam_t
        previous = current
    else:
        raise SpatialError(ErrorCode.PIRLS_DIVERGENCE, f'PIRLS did not converge in {max_iter} iterations')

    final = PirlsState(eta=eta, mu=mu, z=state.z, w=family.weights(mu), iteration=state.iteration, converged=True)
    edf = pls.edf(lam_t)
    if family.scale_known:
        scale = 1.0
    else:
        scale = float(np.sum((y - mu) ** 2 / family.variance(mu)) / (y.size - edf))
    deviance = family.deviance(y, mu)
    return PirlsFit(
        coefficients=theta,
        state=final,
        lam=lam_t,
        edf=edf,
        scale=scale,
        deviance=deviance,
        penalized_deviance=current,
        covariance=scale * pls.covariance(lam_t),
        gcv=pls.gcv(lam_t),
        steps=steps,
    )
