# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Finite sample checks of the rate results for the thin plate smoother and the
spatial estimators.

Expectations over the response noise come from each estimator's linear form;
only the covariate noise is averaged by Monte Carlo. Rates are judged as
log-log slopes and trends with error bars over a ladder of sample sizes.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy import optimize, stats

from spatialplus.basis import LocationSet, build_basis, nullspace_dimension
from spatialplus.define import DEFAULT_SEED
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators import RegressionProblem, get_estimator
from spatialplus.reports import write_frame, write_json
from spatialplus.smoothing import AmseContext, SmootherOperator, amse_components, spectral_decompose

DEFAULT_LADDERS = {
    1: (100, 200, 400, 800),
    2: (100, 225, 400, 900),
}
MAX_LADDER = {1: 3200, 2: 1600}
SEPARATION_ESTIMATORS = ('spatial', 'spatial_plus', 'partial_residual')


def optimal_delta(m: int, d: int) -> float:
    """Exponent δ of the AMSE optimal rate λ ≍ n^{−2m/(2m+d)}"""
    return 2 * m / (2 * m + d)


@dataclass(frozen=True)
class RateSpec:
    d: int = 2
    m: int = 2
    n_ladder: tuple[int, ...] = ()
    """ Increasing sample sizes, a default ladder for d when empty """
    delta: float | None = None
    """ λ ≍ n^{−δ}, the AMSE optimal exponent when None """
    delta_x: float | None = None
    """ λ_x ≍ n^{−δ_x}, the AMSE optimal exponent when None """
    replicates: int = 20
    """ Covariate noise draws per rung """
    amse_draws: int = 3
    """ Draws used for B² and V, each costs an n×n operator """
    target_edf: float = 8.0
    """ Penalized edf of the smoother at the first rung, sets the rate constants """
    sigma: float = 1.0
    sigma_x: float = 0.1
    beta: float = 3.0
    seed: int = DEFAULT_SEED
    workers: int = 1

    def __post_init__(self):
        if self.d not in DEFAULT_LADDERS:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'Dimension d={self.d} is not supported, use 1 or 2')
        if self.m < self.d or 2 * self.m <= self.d:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'The rate results need m ≥ d, got m={self.m}, d={self.d}')
        for name in ('delta', 'delta_x'):
            value = getattr(self, name)
            if value is not None and not 0 < value < 1:
                raise SpatialError(ErrorCode.INVALID_INPUT, f'{name} must lie in (0, 1), got {value}')
        if not self.n_ladder:
            object.__setattr__(self, 'n_ladder', DEFAULT_LADDERS[self.d])
        ladder = tuple(int(n) for n in self.n_ladder)
        object.__setattr__(self, 'n_ladder', ladder)
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise SpatialError(ErrorCode.INVALID_INPUT, 'The sample size ladder must be increasing')
        if ladder[-1] > MAX_LADDER[self.d]:
            logging.warning(f'Ladder goes up to n={ladder[-1]}, expect long dense eigen decompositions')
        if self.replicates < 2:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'At least two replicates per rung are needed for error bars')
        if self.sigma_x < 0 or self.sigma <= 0:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'Noise levels must be positive')

    @property
    def rate(self) -> float:
        return optimal_delta(self.m, self.d) if self.delta is None else self.delta

    @property
    def rate_x(self) -> float:
        return optimal_delta(self.m, self.d) if self.delta_x is None else self.delta_x

    @property
    def nullspace_dim(self) -> int:
        return nullspace_dimension(self.m, self.d)


@dataclass
class RateReport:
    check: str
    rows: list = field(default_factory=list)
    """ One record per rung, or per rung and estimator """
    slopes: dict = field(default_factory=dict)
    """ Fitted slope and its standard error by name """
    statistics: dict = field(default_factory=dict)
    passed: bool = True
    hard: bool = False
    """ If a failure must fail the run """
    notes: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> dict:
        return {
            'check': self.check,
            'passed': self.passed,
            'hard': self.hard,
            'slopes': {name: {'slope': slope, 'se': se} for name, (slope, se) in self.slopes.items()},
            'statistics': self.statistics,
            'notes': self.notes,
            'rows': self.rows,
        }

    def to_csv(self, path) -> None:
        write_frame(self.to_frame(), path)

    def to_json(self, path) -> None:
        write_json(self.to_dict(), path)


def regular_design(n: int, d: int) -> LocationSet:
    """
    Regular grid of n points over [0, 1]^d.

    Args:
        n: Number of points, a perfect d-th power
        d: Dimension
    """
    side = int(round(n ** (1.0 / d)))
    if side ** d != n or side < 2:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'n={n} is not the size of a regular grid in {d} dimensions')
    return LocationSet.grid((side,) * d, 0.0, 1.0)


def confounded_truth(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Smooth covariate trend f^x(t) = Σ_j cos(2πt_j) + 2t_j² and spatial
    effect f = −f^x.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    f_x = np.sum(np.cos(2 * np.pi * points) + 2 * points ** 2, axis=1)
    return f_x, -f_x


def log_slope(x, y) -> tuple[float, float]:
    """Least squares slope of log y on log x with its standard error"""
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr)


def trend_slope(n, values, errors) -> tuple[float, float]:
    """Weighted slope of values on log n, weights from their Monte Carlo errors"""
    errors = np.maximum(np.asarray(errors, dtype=float), 1e-12)
    coefs, covariance = np.polyfit(np.log(n), values, 1, w=1.0 / errors, cov='unscaled')
    return float(coefs[0]), float(np.sqrt(covariance[0, 0]))


def calibrate_lambda(op: SmootherOperator, target_edf: float) -> float:
    """
    λ giving Tr(S_λ) − M = target_edf.

    Args:
        op: Smoother including the polynomial space
        target_edf: Penalized degrees of freedom, below the penalized rank
    """
    M = op.nullspace_dim
    if not 0 < target_edf < op.k - M:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'Target edf {target_edf} outside (0, {op.k - M})')

    def excess(log_lam):
        return op.trace(np.exp(log_lam)) - M - target_edf

    return float(np.exp(optimize.brentq(excess, np.log(1e-16), np.log(1e16), xtol=1e-10)))


def rate_constant(spec: RateSpec) -> float:
    """Constant c of λ = c·n^{−δ}, calibrated at the first rung"""
    n0 = spec.n_ladder[0]
    op = spectral_decompose(build_basis(regular_design(n0, spec.d), spec.m))
    return calibrate_lambda(op, spec.target_edf) * n0 ** spec.rate


def _map(function: Callable, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(function, jobs))
    return [function(job) for job in jobs]


def eigen_rate_check(spec: RateSpec, design: Callable[[int, int], LocationSet] = regular_design,
                     tolerance: float = 0.2) -> RateReport:
    """
    Growth of the penalty eigenvalues, μ_k ≍ k^{2m/d}.

    The slope of log μ_k on log k is fitted over 2M ≤ k ≤ n/2 at every rung.

    Args:
        spec: Orders and sample size ladder
        design: Location family, called as design(n, d)
        tolerance: Relative tolerance on the slope
    """
    M = spec.nullspace_dim
    expected = 2 * spec.m / spec.d
    report = RateReport('eigen', hard=True, statistics={'expected_slope': expected})
    for n in spec.n_ladder:
        op = spectral_decompose(build_basis(design(n, spec.d), spec.m))
        ks = np.arange(2 * M, n // 2 + 1)
        if ks.size < 3:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'n={n} leaves too few eigenvalues between 2M and n/2')
        slope, se = log_slope(ks, op.mu[ks - 1])
        zeros = op.nullspace_dim
        ok = zeros == M and abs(slope - expected) <= tolerance * expected
        report.rows.append({'n': n, 'zeros': zeros, 'k_low': int(ks[0]), 'k_high': int(ks[-1]),
                            'slope': slope, 'slope_se': se, 'passed': ok})
        report.slopes[f'n={n}'] = (slope, se)
        report.passed &= ok
        logging.info(f'Eigenvalue growth at n={n}: slope {slope:.3f} (expected {expected:.3f}), {zeros} zeros')
    return report


def trace_rate_check(spec: RateSpec, delta: float = 0.5, design: Callable[[int, int], LocationSet] = regular_design,
                     bound: float = 4.0) -> RateReport:
    """
    Boundedness of (Tr S_λ − M)·λ^{d/2m} along λ_n = n^{−δ}.

    Args:
        spec: Orders and sample size ladder
        delta: Rate exponent, 0 < δ < 1
        design: Location family, called as design(n, d)
        bound: Largest accepted max/min ratio over the ladder
    """
    if not 0 < delta < 1:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'delta must lie in (0, 1), got {delta}')
    M = spec.nullspace_dim
    report = RateReport('trace', hard=True)
    values = []
    for n in spec.n_ladder:
        op = spectral_decompose(build_basis(design(n, spec.d), spec.m))
        lam = n ** -delta
        trace = op.trace(lam)
        value = (trace - M) * lam ** (spec.d / (2 * spec.m))
        values.append(value)
        report.rows.append({'n': n, 'lambda': lam, 'trace': trace, 'statistic': value})
    ratio = max(values) / min(values)
    report.statistics = {'delta': delta, 'ratio': ratio, 'bound': bound}
    report.passed = bool(ratio < bound)
    logging.info(f'Trace statistic max/min ratio {ratio:.3f} over n={list(spec.n_ladder)}')
    return report


def analytic_moments(form, mean_y, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """E(β̂) and Var(β̂) from the linear form for y ~ N(mean_y, σ²I)"""
    return form.beta_moments(mean_y, sigma)


def monte_carlo_moments(form, mean_y, sigma: float, draws: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Sample mean, variance and standard error of the mean of β̂ over
    simulated responses.
    """
    mean_y = np.asarray(mean_y, dtype=float)
    ys = mean_y + sigma * rng.standard_normal((draws, mean_y.size))
    betas = ys @ form.beta_map.T
    return betas.mean(axis=0), betas.var(axis=0, ddof=1), betas.std(axis=0, ddof=1) / np.sqrt(draws)


def _centered(operator):
    def apply(y):
        values = operator(y)
        return values - values.mean(axis=0)
    return apply


def _moment_rung(job) -> list[dict]:
    """Bias, sd and AMSE terms of every estimator at one rung"""
    spec, n, lam, lam_x, estimators, confounded, with_amse = job
    locs = regular_design(n, spec.d)
    basis = build_basis(locs, spec.m)
    f_x, f = confounded_truth(locs.points)
    if not confounded:
        f_x, f = np.zeros(n), np.zeros(n)
    f_centered = f - f.mean()
    lambdas = {'lambda': lam, 'lambda_x[x]': lam_x}

    base = None
    moments = {name: {'mean': [], 'var': [], 'bias2': [], 'variance': []} for name in estimators}
    for r in range(spec.replicates):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(n, r)))
        x = f_x + spec.sigma_x * rng.standard_normal(n)
        mean_y = spec.beta * x + f
        if base is None:
            base = RegressionProblem(y=mean_y, covariates=x, basis=basis, names=('x',))
            problem = base
        else:
            problem = base.replace(y=mean_y, covariates=x)
        for name in estimators:
            form = get_estimator(name).linear_form(problem, lambdas)
            mean, var = analytic_moments(form, mean_y, spec.sigma)
            moments[name]['mean'].append(mean[-1])
            moments[name]['var'].append(var[-1])
            if with_amse and r < spec.amse_draws:
                context = AmseContext(f_operator=_centered(form.f_operator), mean_y=mean_y, sigma=spec.sigma)
                bias2, variance = amse_components(problem.operator, f_centered, context)
                moments[name]['bias2'].append(bias2)
                moments[name]['variance'].append(variance)

    rows = []
    for name in estimators:
        means = np.asarray(moments[name]['mean'])
        conditional_var = np.asarray(moments[name]['var'])
        bias = float(means.mean() - spec.beta)
        bias_se = float(means.std(ddof=1) / np.sqrt(means.size))
        sd = float(np.sqrt(conditional_var.mean() + means.var(ddof=1)))
        row = {
            'n': n, 'estimator': name, 'lambda': lam, 'lambda_x': lam_x,
            'bias': bias, 'bias_se': bias_se, 'sd': sd,
            'ratio': abs(bias) / sd, 'ratio_se': bias_se / sd,
            'n_var': float(n * conditional_var.mean()),
        }
        if with_amse:
            row['bias2'] = float(np.mean(moments[name]['bias2']))
            row['variance'] = float(np.mean(moments[name]['variance']))
            row['amse'] = row['bias2'] + row['variance']
        rows.append(row)
    logging.debug(f'Moments at n={n} done for {", ".join(estimators)}')
    return rows


def _ladder_lambdas(spec: RateSpec) -> list[tuple[int, float, float]]:
    constant = rate_constant(spec)
    return [(n, constant * n ** -spec.rate, constant * n ** -spec.rate_x) for n in spec.n_ladder]


def _ladder_moments(spec: RateSpec, estimators, confounded: bool, with_amse: bool) -> list[dict]:
    jobs = [(spec, n, lam, lam_x, tuple(estimators), confounded, with_amse) for n, lam, lam_x in _ladder_lambdas(spec)]
    rows = []
    for rung in _map(_moment_rung, jobs, spec.workers):
        rows.extend(rung)
    return rows


def bias_sd_separation(spec: RateSpec, estimators=SEPARATION_ESTIMATORS, confounded: bool = True) -> RateReport:
    """
    Trend of |bias|/sd of β̂ along the ladder at the rate optimal λ and λ_x.

    The spatial model keeps a ratio bounded away from zero while spatial+
    and the partial residual estimator drive it to zero.

    Args:
        spec: Ladder, orders, noise levels and replicate count
        estimators: Estimator names
        confounded: If f = −f^x, else f = f^x = 0
    """
    rows = _ladder_moments(spec, estimators, confounded, with_amse=False)
    report = RateReport('separation', rows=rows)
    frame = report.to_frame()
    for name in estimators:
        part = frame[frame['estimator'] == name]
        report.slopes[name] = trend_slope(part['n'], part['ratio'], part['ratio_se'])

    target = spec.sigma ** 2 / spec.sigma_x ** 2 if spec.sigma_x > 0 else np.inf
    largest = frame[frame['n'] == spec.n_ladder[-1]]
    report.statistics['n_var_target'] = target
    for _, row in largest.iterrows():
        report.statistics[f'n_var[{row["estimator"]}]'] = row['n_var']
    if 'spatial' in estimators and np.isfinite(target):
        within = bool(abs(report.statistics['n_var[spatial]'] - target) <= 0.2 * target)
        report.statistics['n_var_within_band'] = within
        report.passed &= within

    if not confounded:
        report.notes.append('No confounding, the trend criteria do not apply')
        return report
    for name in estimators:
        part = frame[frame['estimator'] == name]
        ratios = part['ratio'].to_numpy()
        slope, se = report.slopes[name]
        if name == 'spatial':
            ok = bool(ratios.min() >= 0.5 * ratios.max())
            report.statistics['spatial_bounded'] = ok
        else:
            ok = bool(slope + 2 * se < 0 and ratios[-1] < ratios[0])
            report.statistics[f'{name}_decreasing'] = ok
        report.passed &= ok
        logging.info(f'{name}: |bias|/sd from {ratios[0]:.3f} to {ratios[-1]:.3f}, slope {slope:.3f} ± {se:.3f}')
    return report


def amse_rate_check(spec: RateSpec, estimators=('spatial', 'spatial_plus'), tolerance: float = 0.3) -> RateReport:
    """
    Slopes of the squared bias against λ at the first rung and of the
    variance against n along the rate optimal λ.

    Args:
        spec: Ladder, orders, noise levels and replicate count
        estimators: Estimator names
        tolerance: Relative tolerance of the variance slope, absolute for the bias slope
    """
    rows = _ladder_moments(spec, estimators, confounded=True, with_amse=True)
    report = RateReport('amse', rows=rows)
    frame = report.to_frame()
    expected_v = -optimal_delta(spec.m, spec.d)
    report.statistics = {'expected_bias_slope': 1.0, 'expected_variance_slope': expected_v}
    report.notes.append('λ_x uses the polynomial part of its optimal rate, logarithmic factors are not resolved')

    n0, lam0, lam_x0 = _ladder_lambdas(spec)[0]
    locs = regular_design(n0, spec.d)
    basis = build_basis(locs, spec.m)
    f_x, f = confounded_truth(locs.points)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(n0, 0)))
    x = f_x + spec.sigma_x * rng.standard_normal(n0)
    mean_y = spec.beta * x + f
    problem = RegressionProblem(y=mean_y, covariates=x, basis=basis, names=('x',))
    factors = np.geomspace(1 / 8, 8, 7)

    for name in estimators:
        estimator = get_estimator(name)
        bias2 = []
        for factor in factors:
            form = estimator.linear_form(problem, {'lambda': lam0 * factor, 'lambda_x[x]': lam_x0})
            context = AmseContext(f_operator=_centered(form.f_operator), mean_y=mean_y, sigma=spec.sigma)
            bias2.append(amse_components(problem.operator, f - f.mean(), context)[0])
        bias_slope = log_slope(lam0 * factors, bias2)
        part = frame[frame['estimator'] == name]
        variance_slope = log_slope(part['n'], part['variance'])
        report.slopes[f'bias2[{name}]'] = bias_slope
        report.slopes[f'variance[{name}]'] = variance_slope
        bias_ok = abs(bias_slope[0] - 1.0) <= tolerance
        ok = bias_ok and abs(variance_slope[0] - expected_v) <= tolerance * abs(expected_v)
        report.statistics[f'{name}_passed'] = bool(ok)
        report.passed &= bool(ok)
        logging.info(f'{name}: B² slope {bias_slope[0]:.3f}, V slope {variance_slope[0]:.3f}')
    return report


def coefficient_assumption_check(spec: RateSpec, design: Callable[[int, int], LocationSet] = regular_design,
                                 a2_tolerance: float = 0.1, a3_bound: float = 5.0) -> RateReport:
    """
    Behaviour of the eigenbasis coefficients ξ^x = Φᵀε^x of the covariate
    noise and c^x = Φᵀf^x of its trend along the ladder.

    n⁻¹Σξ_k should vanish, n⁻¹Σξ_k² approach σ_x² and sup|ξ_k|/log n stay
    bounded. Soft diagnostics, a failure never fails a run.

    Args:
        spec: Ladder, orders, σ_x and seed
        design: Location family, called as design(n, d)
        a2_tolerance: Relative tolerance of n⁻¹Σξ_k² at the largest rung
        a3_bound: Largest accepted max/min ratio of sup|ξ_k|/log n
    """
    report = RateReport('coefficients')
    for n in spec.n_ladder:
        locs = design(n, spec.d)
        op = spectral_decompose(build_basis(locs, spec.m))
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(n,)))
        noise = spec.sigma_x * rng.standard_normal(n)
        xi = op.phi.T @ noise
        c = op.phi.T @ confounded_truth(locs.points)[0]
        report.rows.append({
            'n': n,
            'mean_xi': float(xi.sum() / n),
            'mean_xi_bound': 3 * spec.sigma_x / np.sqrt(n),
            'mean_xi2': float(xi @ xi / n),
            'sup_xi_log': float(np.abs(xi).max() / np.log(n)),
            'mean_c2': float(c @ c / n),
        })
    frame = report.to_frame()
    a1 = bool(np.all(np.abs(frame['mean_xi']) <= frame['mean_xi_bound'] + 1e-15))
    target = spec.sigma_x ** 2
    last = frame['mean_xi2'].iloc[-1]
    a2 = bool(abs(last - target) <= a2_tolerance * target) if target > 0 else bool(last == 0)
    sup = frame['sup_xi_log']
    a3 = bool(sup.max() <= a3_bound * sup.min()) if sup.min() > 0 else bool(sup.max() == 0)
    report.statistics = {'a1': a1, 'a2': a2, 'a3': a3, 'sigma_x2': target}
    report.passed = a1 and a2 and a3
    report.notes.append('With orthonormal Φ, n⁻¹Σ(c_k^x)² tends to the mean square of f^x')
    return report


CHECKS = {
    'eigen': eigen_rate_check,
    'trace': trace_rate_check,
    'separation': bias_sd_separation,
    'amse': amse_rate_check,
    'coefficients': coefficient_assumption_check,
}


def run_check(name: str, spec: RateSpec, **kwargs) -> RateReport:
    if name not in CHECKS:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'Unknown check {name!r}, available: {", ".join(CHECKS)}')
    logging.info(f'Running the {name} check with {asdict(spec)}')
    return CHECKS[name](spec, **kwargs)
