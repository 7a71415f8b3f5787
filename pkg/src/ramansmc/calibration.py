"""Posterior summaries: HPD intervals, limits of detection and fitted curves.

The limit of detection of peak ``p`` is the concentration at which its
height equals three noise standard deviations, ``3 sigma / beta_p``.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .baseline import MarginalResult, build_basis, sample_baseline_and_noise
from .errors import ConfigurationError, StateError
from .likelihood import SpectralLikelihood
from .peaks import fwhm
from .priors import Particle

NOT_DETECTED = 'not detected'
SUMMARY_COLUMNS = (
    'location_mean', 'location_lo', 'location_hi', 'beta_lo', 'beta_hi',
    'fwhm_lo', 'fwhm_hi', 'lod_lo', 'lod_hi',
)
CURVE_COLUMNS = (
    'wavenumber', 'observed', 'baseline_q05', 'baseline_q50', 'baseline_q95',
    'fitted_q05', 'fitted_q50', 'fitted_q95',
)
_TIE_TOL = 1e-12


def lod_draws(beta, sigma):
    """
    Limit-of-detection draws ``3 sigma / beta``.

    Parameters
    ----------
    beta : array-like
        Concentration slopes (a.u. per nM).
    sigma : array-like
        Noise standard deviations (a.u.), broadcastable against `beta`.

    Returns
    -------
    lod : numpy.ndarray
        LOD in nM, NaN where ``beta <= 0``.
    excluded : numpy.ndarray of bool
        True for draws dropped because the slope is not positive.

    """
    beta, sigma = np.broadcast_arrays(np.asarray(beta, dtype=float), np.asarray(sigma, dtype=float))
    excluded = ~(beta > 0)
    with np.errstate(divide='ignore', invalid='ignore'):
        lod = np.where(excluded, np.nan, 3.0 * sigma / np.where(excluded, 1.0, beta))
    return lod, excluded


def hpd_interval(samples, weights=None, mass=0.95):
    """
    Highest posterior density interval of weighted samples.

    The shortest interval between two sample values whose enclosed weight is
    at least `mass`. Ties in width go to the smallest lower endpoint.

    Parameters
    ----------
    samples : array-like, shape (Q,)
    weights : array-like, shape (Q,), optional
        Non-negative weights; uniform if omitted. They are renormalised.
    mass : float, optional
        Probability content, strictly between 0 and 1. Default is 0.95.

    Returns
    -------
    lo, hi : float

    Raises
    ------
    ConfigurationError
        If `mass` is outside (0, 1) or there are fewer than two samples.

    """
    if not 0 < mass < 1:
        raise ConfigurationError(f'HPD mass must lie in (0, 1), got {mass}')
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ConfigurationError('need at least two samples for an HPD interval')
    w = np.full(x.size, 1.0) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != x.shape or np.any(w < 0) or not w.sum() > 0:
        raise ConfigurationError('weights must be non-negative, not all zero, one per sample')
    order = np.lexsort((w, x))
    x = x[order]
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    cum /= cum[-1]
    # window [i, j] holds cum[j + 1] - cum[i]
    ends = np.searchsorted(cum, cum[:-1] + mass - _TIE_TOL, side='left') - 1
    valid = ends < x.size
    starts = np.flatnonzero(valid)
    ends = np.maximum(ends[valid], starts)
    widths = x[ends] - x[starts]
    best = np.flatnonzero(widths <= widths.min() * (1 + _TIE_TOL))[0]
    return float(x[starts[best]]), float(x[ends[best]])


def weighted_quantiles(values, weights, probs):
    """
    Column-wise weighted quantiles by the inverse of the weighted CDF.

    Parameters
    ----------
    values : numpy.ndarray, shape (Q, n)
    weights : numpy.ndarray, shape (Q,)
    probs : sequence of float

    Returns
    -------
    numpy.ndarray, shape (len(probs), n)

    """
    order = np.argsort(values, axis=0, kind='stable')
    sorted_vals = np.take_along_axis(values, order, axis=0)
    cum = np.cumsum(weights[order], axis=0)
    cum /= cum[-1]
    out = np.empty((len(probs), values.shape[1]))
    for k, prob in enumerate(probs):
        idx = np.minimum((cum < prob - _TIE_TOL).sum(axis=0), values.shape[0] - 1)
        out[k] = sorted_vals[idx, np.arange(values.shape[1])]
    return out


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    mean: float

    @property
    def width(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class PeakSummary:
    """HPD intervals for one peak; `lod` is None outside calibration mode
    and for a peak that was not detected."""

    location: Interval
    amplitude: Interval
    rbf_scale: Interval
    lorentz_scale: Interval
    fwhm: Interval
    lod: Interval = None
    detected: bool = True
    excluded_fraction: float = 0.0


@dataclass
class PosteriorSummary:
    """
    Scientific summary of a posterior cloud.

    Attributes
    ----------
    mode : {'single', 'calibration'}
    mass : float
        Probability content of every interval.
    peaks : list of PeakSummary
    noise_sd : Interval
        Noise standard deviation (a.u.).
    overall_lod : Interval or None
        HPD of the smallest per-particle LOD over peaks (calibration only).
    grid, observed : numpy.ndarray, shape (n,)
        Wavenumbers and the observation the curves refer to.
    baseline_curves, fitted_curves : numpy.ndarray, shape (3, n)
        5/50/95 % pointwise quantiles of the baseline and of the predictive
        spectrum (baseline + signature + noise).
    observation : int

    """

    mode: str
    mass: float
    peaks: list
    noise_sd: Interval
    overall_lod: Interval
    grid: np.ndarray
    observed: np.ndarray
    baseline_curves: np.ndarray
    fitted_curves: np.ndarray
    observation: int = 0

    @property
    def n_peaks(self):
        return len(self.peaks)

    def rows(self):
        """Summary CSV rows as strings, one per peak."""
        rows = []
        for peak in self.peaks:
            if self.mode != 'calibration':
                lod = ('', '')
            elif peak.lod is None:
                lod = (NOT_DETECTED, NOT_DETECTED)
            else:
                lod = (_num(peak.lod.lo), _num(peak.lod.hi))
            rows.append([
                _num(peak.location.mean), _num(peak.location.lo), _num(peak.location.hi),
                _num(peak.amplitude.lo), _num(peak.amplitude.hi),
                _num(peak.fwhm.lo), _num(peak.fwhm.hi), *lod,
            ])
        return rows

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_markdown(self):
        """Table with one row per peak: location, slope or amplitude, FWHM, LOD."""
        slope = 'β_p (nM⁻¹)' if self.mode == 'calibration' else 'A_p (a.u.)'
        lines = [
            f'| ℓ_p (cm⁻¹) | {slope} | FWHM (cm⁻¹) | LOD (nM) |',
            '|---:|---:|---:|---:|',
        ]
        for peak in self.peaks:
            if self.mode != 'calibration':
                lod = 'n/a'
            elif peak.lod is None:
                lod = NOT_DETECTED
            else:
                lod = f'[{peak.lod.lo:.3f}; {peak.lod.hi:.3f}]'
            lines.append(
                f'| {peak.location.mean:.0f} | [{peak.amplitude.lo:.2f}; {peak.amplitude.hi:.2f}] '
                f'| [{peak.fwhm.lo:.2f}; {peak.fwhm.hi:.2f}] | {lod} |'
            )
        lines.append('')
        pct = f'{100 * self.mass:g}%'
        lines.append(f'{pct} HPD intervals. Noise σ_ε (a.u.): '
                     f'[{self.noise_sd.lo:.3f}; {self.noise_sd.hi:.3f}].')
        if self.overall_lod is not None:
            lines.append(f'Overall LOD (nM): [{self.overall_lod.lo:.4f}; {self.overall_lod.hi:.4f}].')
        return '\n'.join(lines) + '\n'

    def curves_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(CURVE_COLUMNS)
        for j in range(self.grid.size):
            writer.writerow([
                _num(self.grid[j]), _num(self.observed[j]),
                *(_num(v) for v in self.baseline_curves[:, j]),
                *(_num(v) for v in self.fitted_curves[:, j]),
            ])
        return buf.getvalue()


def _num(value):
    return repr(float(value))


def _interval(samples, weights, mass):
    w = weights / weights.sum()
    lo, hi = hpd_interval(samples, w, mass)
    return Interval(lo, hi, float(w @ samples))


def canonical_order(particles, weights):
    """Permutation that sorts particles by their parameter values."""
    keys = [weights]
    for name in reversed(Particle.FIELDS):
        values = getattr(particles, name)
        keys.extend(values[:, p] for p in reversed(range(values.shape[1])))
    return np.lexsort(keys)


def summarize(cloud, grid, spectra, mode=None, mass=0.95, seed=0, observation=None):
    """
    Summarise a cloud at temperature 1.

    Parameters
    ----------
    cloud : ParticleCloud
        Output of :func:`ramansmc.smc.fit_single`, ``fit_ibis`` or ``fit_batch``.
    grid : array-like, shape (n,)
    spectra : array-like, shape (N, n)
        The spectra the cloud was fitted to.
    mode : {'single', 'calibration'}, optional
        Defaults to 'calibration' when the cloud carries concentrations.
    mass : float, optional
        HPD probability content. Default is 0.95.
    seed : int, optional
        Seed for the baseline and noise draws.
    observation : int, optional
        Observation the baseline and fitted curves refer to; the last one by
        default.

    Returns
    -------
    PosteriorSummary

    Raises
    ------
    StateError
        If the cloud has not reached temperature 1 on all observations.
    ConfigurationError
        For an unknown mode, calibration mode without concentrations, or
        spectra that do not match the cloud.

    """
    from .smc import substream

    if not 0 < mass < 1:
        raise ConfigurationError(f'HPD mass must lie in (0, 1), got {mass}')
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if cloud.kappa != 1.0:
        raise StateError(f'cloud is at temperature {cloud.kappa}, not 1')
    if cloud.n_seen != spectra.shape[0]:
        raise StateError(f'cloud has absorbed {cloud.n_seen} of {spectra.shape[0]} observations')
    mode = ('calibration' if cloud.calibration else 'single') if mode is None else mode
    if mode not in ('single', 'calibration'):
        raise ConfigurationError(f'unknown summary mode {mode!r}')
    if mode == 'calibration' and not cloud.calibration:
        raise ConfigurationError('calibration summary needs a cloud fitted with concentrations')
    obs = spectra.shape[0] - 1 if observation is None else int(observation)
    if not 0 <= obs < spectra.shape[0]:
        raise ConfigurationError(f'observation {obs} out of range')

    order = canonical_order(cloud.particles, cloud.weights)
    particles = cloud.particles[order]
    weights = cloud.weights[order] / cloud.weights.sum()
    spec = cloud.spec
    model = build_basis(grid, spec.baseline.knot_spacing, spec.baseline.lam, spec.baseline.ridge)
    conc = None if cloud.concentrations is None else cloud.concentrations[:spectra.shape[0]]
    like = SpectralLikelihood(spectra, model, spec.noise, conc)
    rng = substream(seed, 'summary')
    n_obs, n = spectra.shape
    rates = like.rates(particles)

    # noise variance pooled over all observations
    pooled_shape = spec.noise.a0 + 0.5 * n_obs * n
    pooled_rate = rates.sum(axis=1) - (n_obs - 1) * spec.noise.b0
    sigma = np.sqrt(1.0 / rng.gamma(pooled_shape, 1.0 / pooled_rate))

    widths = fwhm(particles.rbf_scale, particles.lorentz_scale)
    lods, excluded = (lod_draws(particles.amplitude, sigma[:, None]) if mode == 'calibration'
                      else (None, None))
    peaks = []
    for p in range(particles.n_peaks):
        lod, detected, frac = None, True, 0.0
        if lods is not None:
            bad = excluded[:, p]
            frac = float(weights[bad].sum())
            detected = frac <= 0.5
            if detected and np.count_nonzero(~bad) >= 2:
                lod = _interval(lods[~bad, p], weights[~bad], mass)
            else:
                detected = False
        peaks.append(PeakSummary(
            location=_interval(particles.location[:, p], weights, mass),
            amplitude=_interval(particles.amplitude[:, p], weights, mass),
            rbf_scale=_interval(particles.rbf_scale[:, p], weights, mass),
            lorentz_scale=_interval(particles.lorentz_scale[:, p], weights, mass),
            fwhm=_interval(widths[:, p], weights, mass),
            lod=lod, detected=detected, excluded_fraction=frac,
        ))
    overall = None
    if lods is not None and particles.n_peaks:
        best = np.nanmin(np.where(excluded, np.inf, lods), axis=1)
        finite = np.isfinite(best)
        if np.count_nonzero(finite) >= 2:
            overall = _interval(best[finite], weights[finite], mass)

    means = like.coefficient_means(particles, obs)
    q = len(particles)
    base = np.empty((q, n))
    sig2 = np.empty(q)
    shape = spec.noise.a0 + 0.5 * n
    for k in range(q):
        draw = MarginalResult(np.nan, like.factor, means[k], shape, rates[k, obs])
        coefs, sig2[k] = sample_baseline_and_noise(draw, rng)
        base[k] = model.evaluate(coefs)
    fitted = base + like.signatures(particles, obs) + np.sqrt(sig2)[:, None] * rng.standard_normal((q, n))
    probs = (0.05, 0.5, 0.95)
    return PosteriorSummary(
        mode=mode, mass=mass, peaks=peaks, noise_sd=_interval(sigma, weights, mass),
        overall_lod=overall, grid=grid, observed=spectra[obs].copy(),
        baseline_curves=weighted_quantiles(base, weights, probs),
        fitted_curves=weighted_quantiles(fitted, weights, probs), observation=obs,
    )
