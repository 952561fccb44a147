# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

import configparser
import logging

from spatialplus.define import DEFAULT_SEED
from spatialplus.errors import ErrorCode, SpatialError

SECTION = 'study'


class Settings:
    """
    Study settings handler, read from a plain text key=value file
    """

    instance = None

    defaults = {
        'family': 'gaussian',
        'n': '400',
        'k': '100',
        'm': '2',
        'replicates': '50',
        'seed': str(DEFAULT_SEED),
        'beta': '3.0',
        'sigma_x': '0.1',
        'sigma_y': '1.0',
        'grid_size': '50',
        'extent': '10.0',
        'binomial_size': '10',
        'models': '',
        'workers': '1',
        'output': 'results',
        'export_replicates': 'false',
        'check_acceptance': 'true',
        'intercept': 'false',
    }

    def __init__(self, path=None):
        self._parser = configparser.ConfigParser(interpolation=None)
        self._parser.read_dict({SECTION: self.defaults})
        self.path = path
        if path is not None:
            self.load(path)

    @staticmethod
    def new(path=None):
        """Create a new instance of Settings."""
        Settings.instance = Settings(path)
        return Settings.instance

    @staticmethod
    def get():
        """Return an active instance of Settings."""
        if Settings.instance is None:
            Settings.instance = Settings()
        return Settings.instance

    def load(self, path):
        try:
            with open(path, encoding='utf-8') as handle:
                text = handle.read()
        except OSError as exc:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'Cannot read config file {path}: {exc.strerror}') from exc
        self.loads(text, source=str(path))

    def loads(self, text: str, source: str = '<string>'):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            # Plain key=value files carry no section header
            parser.read_string(f'[{SECTION}]\n{text}', source=source)
        except configparser.Error as exc:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'Malformed config file {source}: {exc}') from exc
        for key, value in parser[SECTION].items():
            if key not in self.defaults:
                logging.warning(f'Unknown config key {key!r} in {source}, ignored')
                continue
            self._parser[SECTION][key] = value
        # Check every typed value now rather than at first use
        self.as_dict()

    def _int(self, key) -> int:
        try:
            return self._parser.getint(SECTION, key)
        except ValueError as exc:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'{key} expects an integer, got {self._raw(key)!r}') from exc

    def _float(self, key) -> float:
        try:
            return self._parser.getfloat(SECTION, key)
        except ValueError as exc:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'{key} expects a number, got {self._raw(key)!r}') from exc

    def _bool(self, key) -> bool:
        try:
            return self._parser.getboolean(SECTION, key)
        except ValueError as exc:
            raise SpatialError(ErrorCode.PARSE_ERROR, f'{key} expects true or false, got {self._raw(key)!r}') from exc

    def _raw(self, key) -> str:
        return self._parser.get(SECTION, key)

    def _set(self, key, value):
        self._parser.set(SECTION, key, str(value).lower() if isinstance(value, bool) else str(value))

    @property
    def family(self) -> str:
        return self._raw('family').strip()

    @family.setter
    def family(self, name):
        self._set('family', name)

    @property
    def n(self) -> int:
        return self._int('n')

    @n.setter
    def n(self, value):
        self._set('n', value)

    @property
    def k(self) -> int:
        return self._int('k')

    @k.setter
    def k(self, value):
        self._set('k', value)

    @property
    def m(self) -> int:
        return self._int('m')

    @property
    def replicates(self) -> int:
        return self._int('replicates')

    @replicates.setter
    def replicates(self, value):
        self._set('replicates', value)

    @property
    def seed(self) -> int:
        return self._int('seed')

    @seed.setter
    def seed(self, value):
        self._set('seed', value)

    @property
    def beta(self) -> float:
        return self._float('beta')

    @property
    def sigma_x(self) -> float:
        return self._float('sigma_x')

    @property
    def sigma_y(self) -> float:
        return self._float('sigma_y')

    @property
    def grid_size(self) -> int:
        return self._int('grid_size')

    @property
    def extent(self) -> float:
        return self._float('extent')

    @property
    def binomial_size(self) -> int:
        return self._int('binomial_size')

    @property
    def models(self) -> tuple[str, ...]:
        """Model tags, empty for the default set of the family"""
        return tuple(tag.strip() for tag in self._raw('models').split(',') if tag.strip())

    @models.setter
    def models(self, tags):
        self._set('models', ','.join(tags))

    @property
    def workers(self) -> int:
        return self._int('workers')

    @workers.setter
    def workers(self, value):
        self._set('workers', value)

    @property
    def output(self) -> str:
        return self._raw('output').strip()

    @output.setter
    def output(self, path):
        self._set('output', path)

    @property
    def export_replicates(self) -> bool:
        return self._bool('export_replicates')

    @export_replicates.setter
    def export_replicates(self, value):
        self._set('export_replicates', value)

    @property
    def check_acceptance(self) -> bool:
        return self._bool('check_acceptance')

    @check_acceptance.setter
    def check_acceptance(self, value):
        self._set('check_acceptance', value)

    @property
    def intercept(self) -> bool:
        """Whether simulated fits carry an intercept column"""
        return self._bool('intercept')

    def as_dict(self) -> dict:
        return {
            'family': self.family, 'n': self.n, 'k': self.k, 'm': self.m, 'replicates': self.replicates,
            'seed': self.seed, 'beta': self.beta, 'sigma_x': self.sigma_x, 'sigma_y': self.sigma_y,
            'grid_size': self.grid_size, 'extent': self.extent, 'binomial_size': self.binomial_size,
            'models': self.models, 'workers': self.workers, 'output': self.output,
            'export_replicates': self.export_replicates, 'check_acceptance': self.check_acceptance,
            'intercept': self.intercept,
        }
