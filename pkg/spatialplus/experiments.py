# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

"""
Simulation studies comparing the estimators on replicated confounded data,
Gaussian responses and exponential family responses.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from spatialplus.basis import nullspace_dimension
from spatialplus.define import MAX_FAILURE_RATE
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators import GAUSSIAN, GLM, EstimatorFeature, ModelTag, RegressionProblem, fit_model, mse_fitted
from spatialplus.random_fields import SimScenario, export_replicate, generate_replicate, replicate_rng
from spatialplus.reports import ensure_directory, write_frame, write_json

GAUSSIAN_MODELS = (
    'null', 'spatial', 'spatial_fx', 'rsr', 'rsr_fx', 'gsem', 'gsem_fx', 'spatial_plus', 'spatial_plus_fx',
)
GLM_MODELS = ('null', 'spatial', 'spatial_fx', 'rsr', 'spatial_plus', 'spatial_plus_fx')

RECORD_COLUMNS = (
    'replicate', 'model', 'status', 'error', 'beta_hat', 'se', 'mse', 'log_mse', 'edf', 'lambda', 'converged',
    'iterations', 'fitted_gap',
)
UNPENALIZED_PAIRS = ('gsem_fx', 'spatial_plus_fx', 'rsr_fx')

REPORT_HEADER = (
    'Every model with a spatial smooth is fitted twice, with a GCV penalty and unpenalized (tag suffix _fx), '
    'so the default Gaussian study reports 9 models: null and both variants of spatial, RSR, gSEM and spatial+.'
)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: SimScenario = field(default_factory=SimScenario.desk)
    models: tuple[str, ...] = ()
    """ Model tags, the default set of the family when empty """
    workers: int = 1
    output: str | None = None
    """ Directory receiving replicates.csv, summary.csv and report.json """
    export_replicates: bool = False
    """ If each replicate's data is also written as CSV """
    check_acceptance: bool = True
    intercept: bool = False
    """ If the fits carry an intercept column, the simulated model has none """

    def __post_init__(self):
        if not self.models:
            object.__setattr__(self, 'models', GLM_MODELS if self.is_glm else GAUSSIAN_MODELS)
        registry = GLM if self.is_glm else GAUSSIAN
        for tag in self.models:
            parsed = ModelTag.parse(tag)
            if parsed.kind not in registry:
                raise SpatialError(
                    ErrorCode.INVALID_INPUT, f'Model {tag!r} is not available for {self.scenario.family} responses'
                )
            if not parsed.penalized and EstimatorFeature.UNPENALIZED not in registry[parsed.kind].features:
                raise SpatialError(ErrorCode.INVALID_INPUT, f'Model {parsed.kind!r} has no unpenalized variant')
        M = nullspace_dimension(self.scenario.m, 2)
        if self.scenario.k <= M:
            raise SpatialError(ErrorCode.INVALID_INPUT, f'Basis size k={self.scenario.k} must exceed M={M}')
        if self.workers < 1:
            raise SpatialError(ErrorCode.INVALID_INPUT, 'At least one worker is required')

    @property
    def is_glm(self) -> bool:
        return self.scenario.family != 'gaussian'

    @classmethod
    def from_settings(cls, settings, full_scale: bool = False) -> 'ExperimentConfig':
        """
        Build the configuration from a Settings instance.

        Args:
            settings: Study settings
            full_scale: If the full scale n, k and replicate count replace the configured ones
        """
        values = dict(
            grid_size=settings.grid_size, extent=settings.extent, n=settings.n, k=settings.k, m=settings.m,
            beta=settings.beta, sigma_x=settings.sigma_x, sigma_y=settings.sigma_y, family=settings.family,
            binomial_size=settings.binomial_size, replicates=settings.replicates, seed=settings.seed,
        )
        if full_scale:
            for key in ('n', 'k', 'replicates'):
                values.pop(key)
            scenario = SimScenario.full(**values)
        else:
            scenario = SimScenario.desk(**values)
        return cls(
            scenario=scenario, models=settings.models, workers=settings.workers, output=settings.output or None,
            export_replicates=settings.export_replicates, check_acceptance=settings.check_acceptance,
            intercept=settings.intercept,
        )


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: pd.DataFrame
    """ One row per replicate and model, failures included """
    summary: pd.DataFrame
    checks: dict = field(default_factory=dict)
    """ Acceptance checks by name """
    failure_rates: dict = field(default_factory=dict)

    @property
    def too_many_failures(self) -> bool:
        return any(rate > MAX_FAILURE_RATE for rate in self.failure_rates.values())

    @property
    def passed(self) -> bool:
        return not self.too_many_failures and all(self.checks.values())

    def to_dict(self) -> dict:
        scenario = asdict(self.config.scenario)
        return {
            'header': REPORT_HEADER,
            'scenario': scenario,
            'models': list(self.config.models),
            'replicates': self.config.scenario.replicates,
            'failure_rates': self.failure_rates,
            'checks': self.checks,
            'passed': self.passed,
            'summary': self.summary.to_dict(orient='records'),
        }

    def write(self, directory) -> None:
        ensure_directory(directory)
        write_frame(self.records, os.path.join(directory, 'replicates.csv'))
        write_frame(self.summary, os.path.join(directory, 'summary.csv'))
        write_json(self.to_dict(), os.path.join(directory, 'report.json'))


def _failed(index: int, tag: str, error: str) -> dict:
    return {'replicate': index, 'model': tag, 'status': 'failed', 'error': error, 'beta_hat': np.nan,
            'se': np.nan, 'mse': np.nan, 'log_mse': np.nan, 'edf': np.nan, 'lambda': np.nan,
            'converged': False, 'iterations': 0, 'fitted_gap': np.nan}


def _fit_replicate(args) -> list[dict]:
    """
    Simulate one replicate and fit every model to it.

    Module level so that worker processes can unpickle it.
    """
    config, index, export_dir = args
    scenario = config.scenario
    try:
        replicate = generate_replicate(scenario, replicate_rng(scenario.seed, index), index)
    except SpatialError as exc:
        logging.warning(f'Replicate {index} could not be simulated: {exc}')
        return [_failed(index, tag, exc.code.name) for tag in config.models]
    if export_dir is not None:
        export_replicate(replicate, os.path.join(export_dir, f'replicate_{index:04d}.csv'))

    family = scenario.response_family() if config.is_glm else None
    problem = RegressionProblem(
        y=replicate.y, covariates=replicate.x, basis=replicate.basis, names=('x',), intercept=config.intercept
    )
    records = []
    fitted = {}
    for tag in config.models:
        try:
            fit = fit_model(tag, problem, family)
        except SpatialError as exc:
            logging.warning(f'Replicate {index}, model {tag}: {exc}')
            records.append(_failed(index, tag, exc.code.name))
            continue
        fitted[tag] = fit.fitted
        mse = mse_fitted(fit, replicate.mean)
        records.append({
            'replicate': index, 'model': tag, 'status': 'ok', 'error': '', 'beta_hat': fit.beta('x'),
            'se': fit.se('x'), 'mse': mse, 'log_mse': float(np.log(mse)) if mse > 0 else -np.inf, 'edf': fit.edf,
            'lambda': fit.lambdas.get('lambda', np.nan), 'converged': fit.converged, 'iterations': fit.iterations,
            'fitted_gap': np.nan,
        })
    if 'spatial_fx' in fitted:
        reference = fitted['spatial_fx']
        for record in records:
            if record['model'] in UNPENALIZED_PAIRS and record['model'] in fitted:
                gap = np.linalg.norm(fitted[record['model']] - reference) / np.linalg.norm(reference)
                record['fitted_gap'] = float(gap)
    return records


def run_replicates(config: ExperimentConfig) -> pd.DataFrame:
    """
    Fit every model to every replicate, replicates in parallel when more
    than one worker is configured. Rows are ordered by replicate, then by
    model as configured, whatever the completion order.
    """
    export_dir = None
    if config.export_replicates and config.output:
        export_dir = ensure_directory(os.path.join(config.output, 'replicates'))
    jobs = [(config, index, export_dir) for index in range(config.scenario.replicates)]

    results = {}
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            futures = {executor.submit(_fit_replicate, job): job[1] for job in jobs}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                logging.debug(f'Replicate {futures[future]} done ({len(results)}/{len(jobs)})')
    else:
        for job in jobs:
            results[job[1]] = _fit_replicate(job)
            logging.debug(f'Replicate {job[1]} done ({len(results)}/{len(jobs)})')

    rows = [record for index in sorted(results) for record in results[index]]
    return pd.DataFrame(rows, columns=list(RECORD_COLUMNS))


def summarize(records: pd.DataFrame, models, beta: float) -> pd.DataFrame:
    """Per model distribution of β̂ and of the fitted value MSE"""
    rows = []
    for tag in models:
        part = records[records['model'] == tag]
        ok = part[part['status'] == 'ok']
        betas = ok['beta_hat'].to_numpy()
        count = betas.size
        row = {'model': tag, 'fits': count, 'failures': int(len(part) - count)}
        if count:
            row.update({
                'mean_beta': float(betas.mean()),
                'bias': float(betas.mean() - beta),
                'sd_beta': float(betas.std(ddof=1)) if count > 1 else np.nan,
                'mc_se': float(betas.std(ddof=1) / np.sqrt(count)) if count > 1 else np.nan,
                'q05_beta': float(np.quantile(betas, 0.05)),
                'median_beta': float(np.median(betas)),
                'q95_beta': float(np.quantile(betas, 0.95)),
                'median_mse': float(ok['mse'].median()),
                'median_log_mse': float(ok['log_mse'].median()),
            })
        rows.append(row)
    return pd.DataFrame(rows)


def _row(summary: pd.DataFrame, tag: str):
    part = summary[(summary['model'] == tag) & (summary['fits'] > 0)]
    return None if part.empty else part.iloc[0]


def gaussian_checks(records: pd.DataFrame, summary: pd.DataFrame, beta: float) -> dict:
    """
    Acceptance checks of a Gaussian study, each computed only when the
    models it compares were fitted.
    """
    checks = {}
    plus = _row(summary, 'spatial_plus')
    if plus is not None:
        plus_bias = abs(plus['bias'])
        for tag in ('null', 'rsr'):
            other = _row(summary, tag)
            if other is not None:
                checks[f'{tag}_bias_exceeds_spatial_plus'] = bool(abs(other['bias']) > 5 * plus_bias)
        spatial = _row(summary, 'spatial')
        if spatial is not None:
            checks['spatial_bias_exceeds_spatial_plus'] = bool(abs(spatial['bias']) > 3 * plus_bias)
    for tag in ('spatial_plus', 'gsem'):
        row = _row(summary, tag)
        if row is not None and np.isfinite(row['mc_se']):
            checks[f'{tag}_unbiased'] = bool(abs(row['mean_beta'] - beta) <= 2 * row['mc_se'])

    rsr = _row(summary, 'rsr')
    spatial = _row(summary, 'spatial')
    if rsr is not None and spatial is not None:
        checks['rsr_mse_close_to_spatial'] = bool(
            abs(rsr['median_mse'] - spatial['median_mse']) <= 0.1 * spatial['median_mse']
        )

    null = _row(summary, 'null')
    for tag in ('spatial', 'rsr', 'gsem', 'spatial_plus'):
        row = _row(summary, tag)
        if row is None:
            continue
        unpenalized = _row(summary, f'{tag}_fx')
        if unpenalized is not None:
            checks[f'{tag}_mse_below_fx'] = bool(row['median_mse'] < unpenalized['median_mse'])
        if null is not None:
            checks[f'{tag}_mse_below_null'] = bool(row['median_mse'] < null['median_mse'])

    ok = records[records['status'] == 'ok'].pivot(index='replicate', columns='model', values='beta_hat')
    if {'rsr', 'null'} <= set(ok.columns):
        both = ok[['rsr', 'null']].dropna()
        checks['rsr_equals_null'] = bool(np.allclose(both['rsr'], both['null'], rtol=1e-10, atol=0))
    triple = [tag for tag in ('spatial_fx', 'gsem_fx', 'spatial_plus_fx') if tag in ok.columns]
    if len(triple) > 1:
        values = ok[triple].dropna()
        checks['unpenalized_estimates_agree'] = bool(all(
            np.allclose(values[tag], values[triple[0]], rtol=1e-8, atol=0) for tag in triple[1:]
        ))
    gaps = records.loc[records['model'].isin(UNPENALIZED_PAIRS) & (records['status'] == 'ok'), 'fitted_gap'].dropna()
    if 'spatial_fx' in ok.columns and not gaps.empty:
        checks['unpenalized_fits_agree'] = bool((gaps <= 1e-8).all())
    return checks


def glm_checks(summary: pd.DataFrame, beta: float, family: str) -> dict:
    checks = {}
    spatial = _row(summary, 'spatial')
    if spatial is not None and np.isfinite(spatial['mc_se']):
        checks['spatial_biased'] = bool(abs(spatial['mean_beta'] - beta) > 3 * spatial['mc_se'])
    plus = _row(summary, 'spatial_plus')
    if plus is not None and np.isfinite(plus['mc_se']):
        if family == 'binomial':
            # Finite sample bias of the binomial fit is tolerated
            checks['spatial_plus_close'] = bool(abs(plus['mean_beta'] - beta) <= 0.05 * abs(beta))
        else:
            checks['spatial_plus_unbiased'] = bool(abs(plus['mean_beta'] - beta) <= 3 * plus['mc_se'])
    return checks


def _report(config: ExperimentConfig, records: pd.DataFrame) -> ExperimentReport:
    scenario = config.scenario
    summary = summarize(records, config.models, scenario.beta)
    failure_rates = {
        tag: float(np.mean(records.loc[records['model'] == tag, 'status'] != 'ok')) for tag in config.models
    }
    checks = {}
    if config.check_acceptance:
        if config.is_glm:
            checks = glm_checks(summary, scenario.beta, scenario.family)
        else:
            checks = gaussian_checks(records, summary, scenario.beta)
    report = ExperimentReport(config=config, records=records, summary=summary, checks=checks,
                              failure_rates=failure_rates)
    for tag, rate in failure_rates.items():
        if rate > MAX_FAILURE_RATE:
            logging.error(f'Model {tag} failed on {100 * rate:.1f}% of the replicates')
    for name, ok in checks.items():
        if not ok:
            logging.warning(f'Acceptance check {name} failed')
    if config.output:
        report.write(config.output)
    return report


def run_gaussian_study(config: ExperimentConfig) -> ExperimentReport:
    """
    Gaussian study: simulate, fit every configured model to every
    replicate, summarize and evaluate the acceptance checks.

    Args:
        config: Scenario, models, parallelism and outputs
    """
    if config.is_glm:
        raise SpatialError(ErrorCode.INVALID_INPUT, f'{config.scenario.family} scenario given to the Gaussian study')
    logging.info(f'Gaussian study: {config.scenario.replicates} replicates, models {", ".join(config.models)}')
    return _report(config, run_replicates(config))


def run_glm_study(config: ExperimentConfig) -> ExperimentReport:
    """
    Exponential family study, as run_gaussian_study with PIRLS fits and
    log(MSE) of the fitted means recorded.

    Args:
        config: Scenario with a non Gaussian family, models, parallelism and outputs
    """
    if not config.is_glm:
        raise SpatialError(ErrorCode.INVALID_INPUT, 'Gaussian scenario given to the GLM study')
    logging.info(f'{config.scenario.family} study: {config.scenario.replicates} replicates')
    return _report(config, run_replicates(config))


def run_study(config: ExperimentConfig) -> ExperimentReport:
    if config.is_glm:
        return run_glm_study(config)
    return run_gaussian_study(config)
