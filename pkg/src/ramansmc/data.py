"""Spectra containers and the CSV formats read and written by the CLI.

Spectra CSV: a header ``wavenumber,obs_1,obs_2,...`` followed by one row per
wavenumber (cm^-1, strictly increasing) with one intensity per observation.
Concentrations CSV: header ``column,concentration_nM`` and one row per
observation column.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputDataError


@dataclass
class SpectraSet:
    """Observed spectra on a shared wavenumber grid.

    ``intensities`` has shape (N, n): one row per observation.
    """

    grid: np.ndarray
    intensities: np.ndarray
    names: list

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.intensities = np.atleast_2d(np.asarray(self.intensities, dtype=float))
        self.names = list(self.names)
        if self.intensities.shape != (len(self.names), self.grid.size):
            raise InputDataError('spectra shape does not match grid and column names')

    @property
    def n_obs(self):
        return len(self.names)

    def column(self, name):
        try:
            return self.intensities[self.names.index(name)]
        except ValueError:
            raise ConfigurationError(f'no observation column named {name!r}') from None

    def select(self, names):
        idx = []
        for name in names:
            if name not in self.names:
                raise ConfigurationError(f'no observation column named {name!r}')
            idx.append(self.names.index(name))
        return SpectraSet(self.grid, self.intensities[idx], list(names))


def _fmt(value):
    return repr(float(value))


def write_spectra_csv(path, spectra):
    """Write spectra with round-trip exact float formatting."""
    with open(path, 'w', newline='', encoding='utf-8') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(['wavenumber', *spectra.names])
        for j, nu in enumerate(spectra.grid):
            writer.writerow([_fmt(nu), *(_fmt(v) for v in spectra.intensities[:, j])])


def read_spectra_csv(path):
    """
    Read a spectra CSV file.

    Raises
    ------
    InputDataError
        On a bad header, ragged or non-numeric rows, or a wavenumber column
        that is not strictly increasing; the message names the line.

    """
    with open(path, newline='', encoding='utf-8') as fp:
        rows = list(csv.reader(fp))
    if not rows:
        raise InputDataError('empty spectra file', line=1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != 'wavenumber':
        raise InputDataError('header must be "wavenumber,<column>,..."', line=1)
    names = header[1:]
    if len(set(names)) != len(names):
        raise InputDataError('duplicate observation column names', line=1)
    grid, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise InputDataError(f'expected {len(header)} fields, found {len(row)}', line=lineno)
        try:
            nums = [float(cell) for cell in row]
        except ValueError:
            raise InputDataError('non-numeric value', line=lineno) from None
        if not all(np.isfinite(nums)):
            raise InputDataError('non-finite value', line=lineno)
        if grid and nums[0] <= grid[-1]:
            raise InputDataError(
                f'wavenumber {nums[0]} does not increase from {grid[-1]}', line=lineno
            )
        if nums[0] <= 0:
            raise InputDataError('wavenumbers must be positive', line=lineno)
        grid.append(nums[0])
        values.append(nums[1:])
    if len(grid) < 2:
        raise InputDataError('need at least two wavenumbers', line=len(rows))
    return SpectraSet(np.array(grid), np.array(values).T, names)


def read_concentrations_csv(path):
    """
    Read ``column,concentration_nM`` rows into an ordered dict.

    Raises
    ------
    ConfigurationError
        On duplicate column ids or values that are not positive numbers.

    """
    with open(path, newline='', encoding='utf-8') as fp:
        rows = list(csv.reader(fp))
    if not rows or [h.strip() for h in rows[0]][:2] != ['column', 'concentration_nM']:
        raise ConfigurationError(f'{path}: header must be "column,concentration_nM"')
    out = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            raise ConfigurationError(f'{path}: line {lineno}: expected 2 fields')
        name = row[0].strip()
        if name in out:
            raise ConfigurationError(f'{path}: line {lineno}: duplicate column id {name!r}')
        try:
            value = float(row[1])
        except ValueError:
            raise ConfigurationError(f'{path}: line {lineno}: bad concentration') from None
        if not (np.isfinite(value) and value > 0):
            raise ConfigurationError(f'{path}: line {lineno}: concentration must be positive')
        out[name] = value
    return out


def write_concentrations_csv(path, names, concentrations):
    with open(path, 'w', newline='', encoding='utf-8') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(['column', 'concentration_nM'])
        for name, c in zip(names, concentrations):
            writer.writerow([name, _fmt(c)])
