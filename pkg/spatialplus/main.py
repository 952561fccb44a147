# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import argparse
import logging
import os
import re
import sys

import numpy as np
import pandas as pd

from spatialplus.asymptotics import CHECKS, RateSpec, run_check
from spatialplus.define import DEFAULT_SEED, PROFILE, VERSION
from spatialplus.errors import ErrorCode, SpatialError
from spatialplus.estimators import RegressionProblem, fit_model
from spatialplus.experiments import REPORT_HEADER, ExperimentConfig, run_study
from spatialplus.glm.families import FAMILIES, get_family
from spatialplus.reports import ensure_directory, format_fit, write_frame, write_json
from spatialplus.settings import Settings

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_CONVERGENCE = 4
EXIT_ACCEPTANCE = 5

HARD_CHECKS = ('eigen', 'trace')


def exit_code(error: SpatialError) -> int:
    if error.code in (ErrorCode.PARSE_ERROR, ErrorCode.INVALID_INPUT):
        return EXIT_USAGE
    if error.is_convergence:
        return EXIT_CONVERGENCE
    if error.code == ErrorCode.ACCEPTANCE_FAILED:
        return EXIT_ACCEPTANCE
    return EXIT_MODEL


def _split(value: str | None) -> list[str]:
    if not value:
        return []
    return [item.strip() for item in value.split(',') if item.strip()]


def read_dataset(path, response: str, covariates: list[str], coords: list[str]) -> tuple:
    """
    Read a comma separated file with a header row.

    Returns:
        Response, covariate matrix, coordinates and the coordinate names
    """
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError) as exc:
        raise SpatialError(ErrorCode.PARSE_ERROR, f'Cannot read {path}: {exc}') from exc

    if not coords:
        coords = [column for column in frame.columns if re.fullmatch(r't\d+', str(column))]
        if not coords:
            raise SpatialError(ErrorCode.PARSE_ERROR, 'No coordinate columns given and none named t1, t2, ...')
    for column in [response, *covariates, *coords]:
        if column not in frame.columns:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'Missing column {column!r} in {path}')

    def numeric(columns):
        try:
            values = frame[columns].to_numpy(dtype=float)
        except ValueError as exc:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'Non numeric values in {", ".join(columns)}') from exc
        if np.isnan(values).any():
            raise SpatialError(ErrorCode.PARSE_ERROR, f'Missing values in {", ".join(columns)}')
        return values

    return numeric([response])[:, 0], numeric(covariates), numeric(coords), coords


def cmd_fit(args) -> int:
    covariates = _split(args.covariates)
    if not covariates:
        raise SpatialError(ErrorCode.INVALID_INPUT, 'At least one covariate is required')
    y, X, points, coords = read_dataset(args.data, args.response, covariates, _split(args.coords))

    family = None
    if args.family != 'gaussian':
        family = get_family('binomial', size=args.binomial_size) if args.family == 'binomial' else get_family(
            args.family
        )
    lam_x = tuple(float(value) for value in _split(args.lambda_x)) or None
    if lam_x is not None and len(lam_x) == 1:
        lam_x = lam_x[0]
    problem = RegressionProblem.from_arrays(
        y, X, points, m=args.m, k=args.k, names=tuple(covariates), intercept=not args.no_intercept,
        lam=args.lam, lam_x=lam_x,
    )
    fit = fit_model(args.model, problem, family)
    print(format_fit(fit))

    if args.output:
        ensure_directory(args.output)
        write_json(fit.to_dict(), os.path.join(args.output, 'fit.json'))
        frame = pd.DataFrame(points, columns=coords)
        frame.insert(0, 'site', np.arange(problem.n))
        frame['f_hat'] = fit.f_hat
        frame['fitted'] = fit.fitted
        write_frame(frame, os.path.join(args.output, 'fhat.csv'))
    return EXIT_OK


def cmd_simulate(args) -> int:
    settings = Settings.new(args.config)
    if args.seed is not None:
        settings.seed = args.seed
    for key in ('family', 'n', 'k', 'replicates', 'workers', 'output'):
        value = getattr(args, key)
        if value is not None:
            setattr(settings, key, value)
    if args.models:
        settings.models = _split(args.models)
    if args.export_replicates:
        settings.export_replicates = True
    if args.no_acceptance:
        settings.check_acceptance = False

    config = ExperimentConfig.from_settings(settings, full_scale=args.full_scale)
    report = run_study(config)
    print(REPORT_HEADER)
    print(report.summary.to_string(index=False, float_format=lambda value: f'{value:.4g}'))
    for name, ok in report.checks.items():
        print(f'{name}: {"pass" if ok else "FAIL"}')

    if report.too_many_failures:
        logging.error('Too many failed fits, the study is not usable')
        return EXIT_MODEL
    if not report.passed:
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_asymptotics(args) -> int:
    ladder = tuple(int(value) for value in _split(args.ladder))
    spec = RateSpec(
        d=args.d, m=args.m, n_ladder=ladder, delta=args.delta, delta_x=args.delta_x,
        replicates=args.replicates, seed=DEFAULT_SEED if args.seed is None else args.seed, workers=args.workers,
    )
    names = list(CHECKS) if args.check == 'all' else [args.check]
    status = EXIT_OK
    for name in names:
        kwargs = {'delta': args.delta} if name == 'trace' and args.delta is not None else {}
        report = run_check(name, spec, **kwargs)
        print(report.to_frame().to_string(index=False, float_format=lambda value: f'{value:.4g}'))
        for key, (slope, se) in report.slopes.items():
            print(f'{key}: slope {slope:.4f} ± {se:.4f}')
        print(f'{name}: {"pass" if report.passed else "FAIL"}{"" if report.hard else " (diagnostic)"}')
        if args.output:
            ensure_directory(args.output)
            report.to_csv(os.path.join(args.output, f'{name}.csv'))
            report.to_json(os.path.join(args.output, f'{name}.json'))
        if report.hard and not report.passed and name in HARD_CHECKS:
            status = EXIT_ACCEPTANCE
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='spatialplus', description='Spatial confounding: spatial+, gSEM, RSR and partial thin plate splines'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {VERSION}')
    parser.add_argument(
        '--seed', type=int, help=f'Random seed, overrides the configuration file (default {DEFAULT_SEED})'
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    fit = commands.add_parser('fit', help='Fit a model to CSV data')
    fit.add_argument('data', help='Comma separated file with a header row')
    fit.add_argument('--model', default='spatial_plus', help='Model tag, e.g. spatial, gsem, rsr_fx')
    fit.add_argument('--family', default='gaussian', choices=sorted(FAMILIES))
    fit.add_argument('--binomial-size', type=int, default=10)
    fit.add_argument('--response', default='y')
    fit.add_argument('--covariates', default='x', help='Comma separated covariate columns')
    fit.add_argument('--coords', help='Comma separated coordinate columns (default t1, t2, ...)')
    fit.add_argument('--k', type=int, help='Basis rank, full rank when omitted')
    fit.add_argument('--m', type=int, default=2, help='Penalty order')
    fit.add_argument('--lambda', dest='lam', type=float, help='Fixed smoothing parameter')
    fit.add_argument('--lambda-x', help='Fixed covariate smoothing parameter(s), comma separated')
    fit.add_argument('--no-intercept', action='store_true')
    fit.add_argument('--output', help='Directory for fit.json and fhat.csv')
    fit.set_defaults(handler=cmd_fit)

    simulate = commands.add_parser('simulate', help='Run a simulation study')
    simulate.add_argument('--config', help='key=value study configuration file')
    simulate.add_argument('--family', choices=sorted(FAMILIES))
    simulate.add_argument('--n', type=int)
    simulate.add_argument('--k', type=int)
    simulate.add_argument('--replicates', type=int)
    simulate.add_argument('--models', help='Comma separated model tags')
    simulate.add_argument('--workers', type=int)
    simulate.add_argument('--output', help='Directory for replicates.csv, summary.csv and report.json')
    simulate.add_argument(
        '--full-scale', '--paper-scale', dest='full_scale', action='store_true', help='n=1000, k=300 and 100 replicates'
    )
    simulate.add_argument('--export-replicates', action='store_true', help='Write every replicate as CSV')
    simulate.add_argument('--no-acceptance', action='store_true', help='Skip the acceptance checks')
    simulate.set_defaults(handler=cmd_simulate)

    asymptotics = commands.add_parser('asymptotics', help='Run the rate checks')
    asymptotics.add_argument('--check', default='all', choices=[*CHECKS, 'all'])
    asymptotics.add_argument('--d', type=int, default=2)
    asymptotics.add_argument('--m', type=int, default=2)
    asymptotics.add_argument('--ladder', help='Comma separated sample sizes')
    asymptotics.add_argument('--delta', type=float)
    asymptotics.add_argument('--delta-x', type=float)
    asymptotics.add_argument('--replicates', type=int, default=20)
    asymptotics.add_argument('--workers', type=int, default=1)
    asymptotics.add_argument('--output', help='Directory for <check>.csv and <check>.json')
    asymptotics.set_defaults(handler=cmd_asymptotics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose or PROFILE == 'development' else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s: %(message)s')

    try:
        return args.handler(args)
    except SpatialError as exc:
        logging.error(str(exc))
        return exit_code(exc)


if __name__ == '__main__':
    sys.exit(main())
