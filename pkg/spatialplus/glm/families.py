# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import numpy as np
from scipy import stats
from scipy.special import expit, xlogy

from spatialplus.errors import ErrorCode, SpatialError


class ExponentialFamily:
    name = ''
    """ Family name for code use """
    link_name = ''
    """ Name of the link function """
    scale_known = True
    """ If the dispersion φ is fixed at 1, else estimated by the Pearson statistic """
    valid_mu_range = (-np.inf, np.inf)
    """ Open interval of valid means """

    def link(self, mu):
        raise NotImplementedError()

    def inverse_link(self, eta):
        raise NotImplementedError()

    def link_derivative(self, mu):
        raise NotImplementedError()

    def variance(self, mu):
        raise NotImplementedError()

    def unit_deviance(self, y, mu):
        raise NotImplementedError()

    def loglik(self, y, mu, scale: float = 1.0) -> float:
        raise NotImplementedError()

    def sample(self, mu, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError()

    def check_support(self, y) -> bool:
        return bool(np.all(np.isfinite(y)))

    def initial_mu(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float).copy()

    def deviance(self, y, mu) -> float:
        return float(np.sum(self.unit_deviance(y, mu)))

    def valid_mu(self, mu) -> bool:
        low, high = self.valid_mu_range
        mu = np.asarray(mu)
        return bool(np.all(np.isfinite(mu)) and np.all(mu > low) and np.all(mu < high))

    def validate(self, y):
        """Reject responses outside the family support"""
        y = np.asarray(y, dtype=float)
        if not self.check_support(y):
            raise SpatialError(ErrorCode.INVALID_RESPONSE, f'Response values outside the {self.name} support')

    def weights(self, mu) -> np.ndarray:
        """PIRLS weights 1/(g′(μ)²V(μ))"""
        return 1.0 / (self.link_derivative(mu) ** 2 * self.variance(mu))

    def __repr__(self):
        return f'{type(self).__name__}(link={self.link_name})'


class Gaussian(ExponentialFamily):
    name = 'gaussian'
    link_name = 'identity'
    scale_known = False

    def __init__(self, sigma: float = 1.0):
        self.sigma = sigma

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def inverse_link(self, eta):
        return np.asarray(eta, dtype=float)

    def link_derivative(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def unit_deviance(self, y, mu):
        return (np.asarray(y) - np.asarray(mu)) ** 2

    def loglik(self, y, mu, scale=1.0):
        return float(np.sum(stats.norm.logpdf(y, loc=mu, scale=np.sqrt(scale))))

    def sample(self, mu, rng):
        return rng.normal(mu, self.sigma)


class Poisson(ExponentialFamily):
    name = 'poisson'
    link_name = 'log'
    valid_mu_range = (0.0, np.inf)

    def link(self, mu):
        return np.log(mu)

    def inverse_link(self, eta):
        return np.exp(eta)

    def link_derivative(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def variance(self, mu):
        return np.asarray(mu, dtype=float)

    def unit_deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        return 2 * (xlogy(y, y / mu) - (y - mu))

    def loglik(self, y, mu, scale=1.0):
        return float(np.sum(stats.poisson.logpmf(y, mu)))

    def check_support(self, y):
        return bool(np.all(np.isfinite(y)) and np.all(y >= 0) and np.all(y == np.round(y)))

    def initial_mu(self, y):
        y = np.asarray(y, dtype=float)
        return np.where(y == 0, y + 0.1, y)

    def sample(self, mu, rng):
        return rng.poisson(mu).astype(float)


class Exponential(ExponentialFamily):
    """
    Exponential responses, a gamma family with shape 1/φ, with the log link.
    """
    name = 'exponential'
    link_name = 'log'
    scale_known = False
    valid_mu_range = (0.0, np.inf)

    def link(self, mu):
        return np.log(mu)

    def inverse_link(self, eta):
        return np.exp(eta)

    def link_derivative(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def variance(self, mu):
        return np.asarray(mu, dtype=float) ** 2

    def unit_deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        return 2 * ((y - mu) / mu - np.log(y / mu))

    def loglik(self, y, mu, scale=1.0):
        return float(np.sum(stats.gamma.logpdf(y, a=1.0 / scale, scale=np.asarray(mu) * scale)))

    def check_support(self, y):
        return bool(np.all(np.isfinite(y)) and np.all(y > 0))

    def sample(self, mu, rng):
        return rng.exponential(mu)


class Binomial(ExponentialFamily):
    """
    Counts of successes out of size trials, mean μ = size·p and link
    g(μ) = log(μ/(size − μ)).
    """
    name = 'binomial'
    link_name = 'logit'

    def __init__(self, size: int = 10):
        self.size = size
        self.valid_mu_range = (0.0, float(size))

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        return np.log(mu / (self.size - mu))

    def inverse_link(self, eta):
        return self.size * expit(eta)

    def link_derivative(self, mu):
        mu = np.asarray(mu, dtype=float)
        return self.size / (mu * (self.size - mu))

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * (self.size - mu) / self.size

    def unit_deviance(self, y, mu):
        y = np.asarray(y, dtype=float)
        n = self.size
        return 2 * (xlogy(y, y / mu) + xlogy(n - y, (n - y) / (n - mu)))

    def loglik(self, y, mu, scale=1.0):
        return float(np.sum(stats.binom.logpmf(y, self.size, np.asarray(mu) / self.size)))

    def check_support(self, y):
        return bool(
            np.all(np.isfinite(y)) and np.all(y >= 0) and np.all(y <= self.size) and np.all(y == np.round(y))
        )

    def initial_mu(self, y):
        return np.clip(np.asarray(y, dtype=float), 0.01 * self.size, 0.99 * self.size)

    def sample(self, mu, rng):
        return rng.binomial(self.size, np.asarray(mu) / self.size).astype(float)

    def __repr__(self):
        return f'Binomial(size={self.size}, link={self.link_name})'


FAMILIES = {
    Gaussian.name: Gaussian,
    Poisson.name: Poisson,
    Exponential.name: Exponential,
    Binomial.name: Binomial,
}


def get_family(name: str, **kwargs) -> ExponentialFamily:
    """
    Instantiate a family by name.

    Args:
        name: One of gaussian, poisson, exponential, binomial
        kwargs: Family options, e.g. size for binomial
    """
    if name not in FAMILIES:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'Unknown family {name!r}, available: {", ".join(FAMILIES)}')
    return FAMILIES[name](**kwargs)
