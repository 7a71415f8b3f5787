"""Synthetic spectra with known ground truth, and brute-force oracles.

The oracles here deliberately avoid the production code paths: they use
dense linear algebra, scipy's B-spline design matrix and scipy.stats
densities, so agreement with the banded/vectorised implementation is an
independent check.
"""

from dataclasses import dataclass, field
import json

import numpy as np
from scipy import stats
from scipy.interpolate import BSpline
from scipy.special import gammaln

from .data import SpectraSet
from .errors import ConfigurationError
from .peaks import PeakParams, check_grid, signature

DESK_TAMRA_LOCATIONS = (752.0, 1003.0, 1220.0, 1358.0, 1655.0)


@dataclass(frozen=True)
class SinusoidBaseline:
    """``level + amplitude * sin(2 pi nu / period) + slope * (nu - grid[0])``."""

    level: float = 200.0
    amplitude: float = 200.0
    period: float = 1200.0
    slope: float = 0.0

    def __call__(self, grid):
        grid = np.asarray(grid, dtype=float)
        return (self.level + self.amplitude * np.sin(2.0 * np.pi * grid / self.period)
                + self.slope * (grid - grid[0]))

    def to_dict(self):
        return {'type': 'sinusoid', 'level': self.level, 'amplitude': self.amplitude,
                'period': self.period, 'slope': self.slope}


@dataclass(frozen=True)
class SplineBaseline:
    """Explicit cubic B-spline coefficients on knots starting at the grid minimum."""

    knot_spacing: float
    coefficients: tuple

    def __call__(self, grid):
        grid = np.asarray(grid, dtype=float)
        coefs = np.asarray(self.coefficients, dtype=float)
        knots = grid[0] + self.knot_spacing * np.arange(-3, coefs.size + 1)
        if knots[-4] < grid[-1]:
            raise ConfigurationError('too few spline coefficients for the grid')
        return BSpline(knots, coefs, 3, extrapolate=False)(grid)

    def to_dict(self):
        return {'type': 'spline', 'knot_spacing': self.knot_spacing,
                'coefficients': list(self.coefficients)}


def prior_spline_baseline(grid, knot_spacing=10.0, lam=1e-2, noise_sd=2.0, level=200.0,
                          slope=0.0, seed=0):
    """
    Spline baseline whose curvature is drawn from the smoothing prior.

    Second differences of the coefficients are independent
    ``N(0, noise_sd^2 / (n * lam))``, the penalty's implied prior for ``n``
    grid points, integrated twice from ``level`` with initial trend `slope`
    per knot. Data simulated with this baseline are well specified for the
    baseline model, which makes it the right truth for coverage checks.
    """
    grid = check_grid(grid)
    span = grid[-1] - grid[0]
    n_coefs = int(np.ceil(span / knot_spacing - 1e-9)) + 3
    rng = np.random.default_rng(seed)
    second = rng.normal(0.0, noise_sd / np.sqrt(grid.size * lam), n_coefs - 2)
    first = slope + np.concatenate([[0.0], np.cumsum(second)])
    coefs = level + np.concatenate([[0.0], np.cumsum(first)])
    return SplineBaseline(float(knot_spacing), tuple(coefs.tolist()))


def _baselines_from_dict(data):
    if isinstance(data, list):
        return tuple(baseline_from_dict(d) for d in data)
    return baseline_from_dict(data)


def baseline_from_dict(data):
    kind = data.get('type', 'sinusoid')
    if kind == 'sinusoid':
        return SinusoidBaseline(**{k: float(v) for k, v in data.items() if k != 'type'})
    if kind == 'spline':
        return SplineBaseline(float(data['knot_spacing']), tuple(map(float, data['coefficients'])))
    raise ConfigurationError(f'unknown baseline type {kind!r}')


@dataclass(frozen=True)
class GroundTruth:
    """
    Known truth for a synthetic dataset.

    Parameters
    ----------
    grid : numpy.ndarray
    peaks : tuple of PeakParams
        In dilution mode the amplitude of each peak is its concentration slope.
    baseline : SinusoidBaseline or SplineBaseline, or a tuple of them
        A tuple gives every observation its own baseline.
    noise_sd : float
    concentrations : tuple of float, optional
        One per observation; enables dilution mode.
    n_obs : int
        Number of observations when there are no concentrations.

    """

    grid: np.ndarray
    peaks: tuple
    baseline: object = field(default_factory=SinusoidBaseline)
    noise_sd: float = 2.0
    concentrations: tuple = None
    n_obs: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'grid', check_grid(self.grid))
        object.__setattr__(self, 'peaks', tuple(self.peaks))
        if not self.noise_sd >= 0:
            raise ConfigurationError('noise sd must be non-negative')
        if self.concentrations is not None:
            object.__setattr__(self, 'concentrations', tuple(float(c) for c in self.concentrations))
        if isinstance(self.baseline, (list, tuple)):
            object.__setattr__(self, 'baseline', tuple(self.baseline))
            if len(self.baseline) != self.n_observations:
                raise ConfigurationError('need one baseline per observation')

    @property
    def n_observations(self):
        return self.n_obs if self.concentrations is None else len(self.concentrations)

    def noiseless(self):
        """Noise-free spectra, shape (N, n)."""
        if isinstance(self.baseline, tuple):
            base = np.array([b(self.grid) for b in self.baseline])
        else:
            base = self.baseline(self.grid)[None, :]
        sig = signature(self.grid, self.peaks) if self.peaks else np.zeros(self.grid.size)
        scales = (np.ones(self.n_observations) if self.concentrations is None
                  else np.asarray(self.concentrations))
        return base + scales[:, None] * sig[None, :]

    def lod(self):
        """True limits of detection ``3 sigma / beta`` per peak."""
        return np.array([3.0 * self.noise_sd / pk.amplitude for pk in self.peaks])

    def to_dict(self):
        grid = self.grid
        out = {
            'grid': grid.tolist(),
            'peaks': [{'location': p.location, 'rbf_scale': p.rbf_scale,
                       'lorentz_scale': p.lorentz_scale, 'amplitude': p.amplitude}
                      for p in self.peaks],
            'baseline': ([b.to_dict() for b in self.baseline] if isinstance(self.baseline, tuple)
                         else self.baseline.to_dict()),
            'noise_sd': self.noise_sd,
            'n_obs': self.n_obs,
        }
        if self.concentrations is not None:
            out['concentrations'] = list(self.concentrations)
        return out

    @classmethod
    def from_dict(cls, data):
        grid = data['grid']
        if isinstance(grid, dict):
            grid = np.arange(grid['start'], grid['stop'] + 0.5 * grid['step'], grid['step'])
        peaks = tuple(PeakParams(float(p['location']), float(p.get('rbf_scale', 0.0)),
                                 float(p.get('lorentz_scale', 0.0)),
                                 float(p.get('amplitude', p.get('slope', 1.0))))
                      for p in data.get('peaks', []))
        return cls(np.asarray(grid, dtype=float), peaks,
                   _baselines_from_dict(data.get('baseline', {'type': 'sinusoid'})),
                   float(data.get('noise_sd', 2.0)), data.get('concentrations'),
                   int(data.get('n_obs', 1)))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def generate(truth, seed=0):
    """
    Simulate spectra: baseline plus (concentration-scaled) peaks plus white noise.

    Returns
    -------
    SpectraSet

    """
    clean = truth.noiseless()
    rng = np.random.default_rng(seed)
    noisy = clean + truth.noise_sd * rng.standard_normal(clean.shape)
    names = [f'obs_{i + 1}' for i in range(clean.shape[0])]
    return SpectraSet(truth.grid, noisy, names)


def desk_tamra_grid():
    return np.linspace(600.0, 1800.0, 2401)


def desk_tamra_truth(concentrations=None, noise_sd=2.0):
    """
    The default synthetic benchmark: 600-1800 cm^-1 at 0.5 cm^-1, five peaks.

    With `concentrations` the amplitudes become slopes in a.u. per nM.
    """
    heights = (120.0, 80.0, 150.0, 210.0, 160.0)
    slopes = (52.0, 160.0, 250.0, 470.0, 215.0)
    rbf = (14.0, 18.0, 12.0, 16.0, 15.0)
    lor = (20.0, 25.0, 16.0, 30.0, 22.0)
    amps = heights if concentrations is None else slopes
    peaks = tuple(PeakParams(loc, s, g, a) for loc, s, g, a in
                  zip(DESK_TAMRA_LOCATIONS, rbf, lor, amps))
    return GroundTruth(desk_tamra_grid(), peaks, SinusoidBaseline(200.0, 200.0, 1200.0),
                       noise_sd, concentrations)


def desk_tamra_dilution(n_concentrations=10, replicates=3, noise_sd=2.0, seed=0,
                        knot_spacing=10.0, lam=1e-2):
    """
    Dilution study on the desk-TAMRA peaks with a separate baseline per spectrum.

    Each baseline is drawn by :func:`prior_spline_baseline` with the given
    smoothing settings, so the data are well specified for a fit that uses
    the same `knot_spacing` and `lam`.
    """
    conc = dilution_concentrations(n_concentrations, replicates)
    truth = desk_tamra_truth(concentrations=conc, noise_sd=noise_sd)
    grid = truth.grid
    seeds = np.random.SeedSequence(seed).generate_state(conc.size)
    baselines = tuple(prior_spline_baseline(grid, knot_spacing, lam, noise_sd, seed=int(s))
                      for s in seeds)
    return GroundTruth(grid, truth.peaks, baselines, noise_sd, conc)


DESK_TAMRA_PREDICTIONS = (755.0, 999.0, 1222.0, 1356.0, 1659.0)


def dilution_concentrations(n_concentrations=10, replicates=1, low=0.13, high=24.7):
    """Log-spaced concentrations in nM, repeated in blocks of replicates."""
    conc = np.geomspace(low, high, n_concentrations)
    return np.tile(conc, replicates)


# --- oracles -----------------------------------------------------------------

def dense_marginal_oracle(residual, basis, penalty, lam, ridge, a0=1e-3, b0=1e-3):
    """
    Log marginal likelihood of a residual using dense linear algebra.

    Parameters
    ----------
    residual : array-like, shape (n,)
    basis : array-like, shape (n, M)
        Dense basis matrix.
    penalty : array-like, shape (M, M)
        Dense ``D^T D``.
    lam, ridge : float
    a0, b0 : float
        Inverse-gamma prior of the noise variance.

    Returns
    -------
    log_marginal : float
    rate : float
        Posterior inverse-gamma rate.

    """
    r = np.asarray(residual, dtype=float)
    basis = np.asarray(basis, dtype=float)
    n, m = basis.shape
    if n > 256 or m > 16:
        raise ConfigurationError('dense oracle is limited to n <= 256 and M <= 16')
    prior = n * lam * np.asarray(penalty, dtype=float) + ridge * np.eye(m)
    post = prior + basis.T @ basis
    proj = basis.T @ r
    mean = np.linalg.solve(post, proj)
    rate = b0 + 0.5 * (r @ r - proj @ mean)
    shape = a0 + 0.5 * n
    _, logdet_prior = np.linalg.slogdet(prior)
    _, logdet_post = np.linalg.slogdet(post)
    log_marginal = (0.5 * logdet_prior - 0.5 * logdet_post + a0 * np.log(b0)
                    - shape * np.log(rate) + gammaln(shape) - gammaln(a0)
                    - 0.5 * n * np.log(2.0 * np.pi))
    return float(log_marginal), float(rate)


def quadrature_marginal_oracle(residual, basis_column, ridge, a0, b0):
    """
    Marginal likelihood of a one-coefficient model by 2-D numerical quadrature.

    Integrates ``N(r; b * alpha, sigma2 I) N(alpha; 0, sigma2 / ridge)
    InvGamma(sigma2; a0, b0)`` over ``alpha`` and ``log sigma2``.

    Returns
    -------
    float
        The log marginal likelihood.

    """
    from scipy import integrate

    r = np.asarray(residual, dtype=float)
    b = np.asarray(basis_column, dtype=float)
    n = r.size
    # centre and scale the integration region on the conditional posterior
    prec = ridge + b @ b
    alpha_hat = (b @ r) / prec
    s2_hat = max((r @ r - (b @ r)**2 / prec) / n, 1e-12)

    def log_joint(alpha, log_s2):
        s2 = np.exp(log_s2)
        resid = r - b * alpha
        out = (-0.5 * n * np.log(2 * np.pi * s2) - 0.5 * (resid @ resid) / s2
               + 0.5 * np.log(ridge / (2 * np.pi * s2)) - 0.5 * ridge * alpha**2 / s2
               + a0 * np.log(b0) - gammaln(a0) - (a0 + 1) * log_s2 - b0 / s2
               + log_s2)
        return out

    peak = log_joint(alpha_hat, np.log(s2_hat))
    half_width = 12.0 * np.sqrt(s2_hat / prec) * 4.0
    inner = lambda log_s2: integrate.quad(
        lambda a: np.exp(log_joint(a, log_s2) - peak),
        alpha_hat - half_width, alpha_hat + half_width, epsabs=0, epsrel=1e-10, limit=200,
    )[0]
    total, _ = integrate.quad(inner, np.log(s2_hat) - 12.0, np.log(s2_hat) + 12.0,
                              epsabs=0, epsrel=1e-10, limit=200)
    return float(np.log(total) + peak)


def dense_basis(grid, knot_spacing):
    """Dense cubic B-spline design matrix via scipy, independent of the banded build."""
    grid = np.asarray(grid, dtype=float)
    n_int = int(np.ceil((grid[-1] - grid[0]) / knot_spacing - 1e-9))
    knots = grid[0] + knot_spacing * np.arange(-3, n_int + 4)
    return BSpline.design_matrix(grid, knots, 3).toarray()


def dense_penalty(n_splines):
    d = np.diff(np.eye(n_splines), 2, axis=0)
    return d.T @ d


@dataclass
class GridPosterior:
    """Discretised posterior from :func:`grid_posterior_oracle`.

    ``axes`` maps parameter names to cell midpoints, ``edges`` to cell
    boundaries, and ``mass`` holds the normalised posterior mass per cell
    with axes ordered as in ``names``.
    """

    names: tuple
    axes: dict
    edges: dict
    mass: np.ndarray

    def marginal(self, name):
        k = self.names.index(name)
        other = tuple(i for i in range(self.mass.ndim) if i != k)
        return self.mass.sum(axis=other)


MAX_ORACLE_CELLS = 40**3


def grid_posterior_oracle(grid, spectrum, spec, ranges, resolution=40):
    """
    Brute-force posterior of a single-peak model on a regular parameter grid.

    Parameters
    ----------
    grid : array-like, shape (n,)
    spectrum : array-like, shape (n,)
    spec : PriorSpec
        Resolved prior with one peak and ``peak_shape`` 'rbf' or 'lorentz'.
    ranges : dict
        ``{'location': (lo, hi), 'scale': (lo, hi), 'amplitude': (lo, hi)}``
        bounding the region to discretise.
    resolution : int or sequence of int, optional
        Cells per dimension. Default 40.

    Returns
    -------
    GridPosterior
        With parameter names ``('location', 'scale', 'amplitude')``.

    """
    if spec.n_peaks != 1 or spec.peak_shape not in ('rbf', 'lorentz'):
        raise ConfigurationError('grid oracle needs one pure RBF or Lorentzian peak')
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,))
    if np.prod(res) > MAX_ORACLE_CELLS:
        raise ConfigurationError(f'grid oracle is limited to {MAX_ORACLE_CELLS} cells')
    grid = np.asarray(grid, dtype=float)
    y = np.asarray(spectrum, dtype=float)
    names = ('location', 'scale', 'amplitude')
    edges = {nm: np.linspace(*ranges[nm], k + 1) for nm, k in zip(names, res)}
    axes = {nm: 0.5 * (e[1:] + e[:-1]) for nm, e in edges.items()}

    basis = dense_basis(grid, spec.baseline.knot_spacing)
    n, m = basis.shape
    prior_prec = n * spec.baseline.lam * dense_penalty(m) + spec.baseline.ridge * np.eye(m)
    post = prior_prec + basis.T @ basis
    post_inv = np.linalg.inv(post)
    a0, b0 = spec.noise.a0, spec.noise.b0
    shape = a0 + 0.5 * n
    const = (0.5 * np.linalg.slogdet(prior_prec)[1] - 0.5 * np.linalg.slogdet(post)[1]
             + a0 * np.log(b0) + gammaln(shape) - gammaln(a0) - 0.5 * n * np.log(2 * np.pi))

    loc, scale, amp = np.meshgrid(axes['location'], axes['scale'], axes['amplitude'], indexing='ij')
    loc, scale, amp = loc.ravel(), scale.ravel(), amp.ravel()
    loglik = np.empty(loc.size)
    for lo in range(0, loc.size, 2048):
        sl = slice(lo, lo + 2048)
        d = grid[None, :] - loc[sl, None]
        if spec.peak_shape == 'rbf':
            prof = np.exp(-d**2 / (2.0 * scale[sl, None]**2))
        else:
            prof = scale[sl, None]**2 / (d**2 + scale[sl, None]**2)
        r = y[None, :] - amp[sl, None] * prof
        proj = r @ basis
        quad = np.sum(r * r, axis=1) - np.einsum('qm,mk,qk->q', proj, post_inv, proj)
        loglik[sl] = const - shape * np.log(b0 + 0.5 * quad)

    lo_b, hi_b = spec.location_bounds
    loc_prior = stats.truncnorm(
        (lo_b - spec.location_means[0]) / spec.location_sds[0],
        (hi_b - spec.location_means[0]) / spec.location_sds[0],
        loc=spec.location_means[0], scale=spec.location_sds[0],
    )
    scale_prior = spec.rbf_scale if spec.peak_shape == 'rbf' else spec.lorentz_scale
    logprior = (loc_prior.logpdf(loc)
                + stats.lognorm(s=scale_prior.log_sd, scale=np.exp(scale_prior.log_median)).logpdf(scale)
                + stats.uniform(0.0, spec.amplitude_bound).logpdf(amp))
    logpost = loglik + logprior
    # cell volumes are equal on a regular grid
    mass = np.exp(logpost - np.max(logpost))
    mass /= mass.sum()
    return GridPosterior(names, axes, edges, mass.reshape(tuple(res)))
