# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import json
import logging
import os

import numpy as np
import pandas as pd

from spatialplus.define import SCHEMA_VERSION, VERSION


def _plain(value):
    """JSON friendly copy of numpy scalars and arrays"""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_json(payload: dict, path) -> None:
    """Write a report with the schema version stamped in"""
    document = {'schema_version': SCHEMA_VERSION, 'version': VERSION, **_plain(payload)}
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, indent=2)
    logging.info(f'Wrote {path}')


def write_frame(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, encoding='utf-8')
    logging.info(f'Wrote {path}')


def ensure_directory(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def coefficient_table(fit) -> pd.DataFrame:
    """Estimate, standard error and p-value of every linear coefficient"""
    return pd.DataFrame({
        'term': list(fit.names),
        'estimate': fit.beta_hat,
        'std_error': fit.se_beta,
        'p_value': fit.p_values,
    })


def format_fit(fit) -> str:
    """
    Human readable summary of a fit: coefficient table, then edf, deviance
    explained, σ̂, AIC and the smoothing parameters.
    """
    table = coefficient_table(fit).to_string(index=False, float_format=lambda value: f'{value:.6g}')
    lines = [f'Model: {fit.model_tag}' + (f' ({fit.family})' if fit.family != 'gaussian' else ''), '', table, '']
    lines.append(f'edf: {fit.edf:.3f}')
    lines.append(f'Deviance explained: {100 * fit.deviance_explained:.1f}%')
    lines.append(f'sigma: {fit.sigma_hat:.6g}')
    lines.append(f'AIC: {fit.aic:.6g}')
    for key, value in fit.lambdas.items():
        lines.append(f'{key}: {value:.6g}')
    if not fit.comparable:
        lines.append('')
        lines.append('Note: fitted to spatially residualized data, do not compare edf, AIC or deviance')
    if not fit.converged:
        lines.append('Warning: the fit did not converge')
    return '\n'.join(lines)
