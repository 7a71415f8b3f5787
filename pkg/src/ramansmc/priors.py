"""Prior specification for the peak parameters, with sampling and densities.

Peak locations are Gaussian around predicted positions (truncated to the
analysis window), the RBF and Lorentzian scales are lognormal, and the
amplitudes are uniform on ``[0, amplitude_bound]``. The spline coefficients
and noise variance have conjugate priors that are integrated out; their
hyperparameters live here too so one object configures a whole fit.
"""

from dataclasses import dataclass, field, replace
import json
import math

import numpy as np
from scipy.special import log_ndtr, ndtri

from .baseline import NoisePrior
from .errors import ConfigurationError
from .peaks import PEAK_SHAPES

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ScalePrior:
    """Lognormal prior: ``log(scale) ~ N(log_median, log_sd^2)``."""

    log_median: float
    log_sd: float

    def __post_init__(self):
        if not (np.isfinite(self.log_median) and self.log_sd > 0):
            raise ConfigurationError('scale prior needs a finite log-median and positive log-sd')

    @classmethod
    def from_mean(cls, mean, log_sd):
        """Lognormal whose mean is `mean`; this is how the published RBF prior reads."""
        return cls(math.log(mean) - 0.5 * log_sd**2, log_sd)

    @classmethod
    def from_median(cls, median, log_sd):
        return cls(math.log(median), log_sd)

    @property
    def median(self):
        return math.exp(self.log_median)

    @property
    def mean(self):
        return math.exp(self.log_median + 0.5 * self.log_sd**2)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            logx = np.log(x)
            out = (-logx - math.log(self.log_sd) - LOG_SQRT_2PI
                   - 0.5 * ((logx - self.log_median) / self.log_sd)**2)
        return np.where(x > 0, out, -np.inf)

    def cdf(self, x):
        from scipy.special import ndtr
        x = np.asarray(x, dtype=float)
        with np.errstate(divide='ignore'):
            return np.where(x > 0, ndtr((np.log(x) - self.log_median) / self.log_sd), 0.0)

    def sample(self, rng, size):
        return np.exp(self.log_median + self.log_sd * rng.standard_normal(size))


DEFAULT_RBF_SCALE = ScalePrior.from_mean(16.47, 0.34)
DEFAULT_LORENTZ_SCALE = ScalePrior.from_mean(25.27, 0.4)
DEFAULT_LOCATION_SD = 5.0


@dataclass(frozen=True)
class BaselineConfig:
    knot_spacing: float = 10.0
    lam: float = 1e-2
    ridge: float = 1e-6

    def __post_init__(self):
        if not self.knot_spacing > 0:
            raise ConfigurationError('knot spacing must be positive')
        if self.lam < 0 or self.ridge < 0:
            raise ConfigurationError('lambda and ridge must be non-negative')


@dataclass
class Particle:
    """
    Peak parameters of one particle, or of a batch of particles.

    Every field has shape ``(..., P)``. ``amplitude`` holds peak heights, or
    concentration slopes when fitting a dilution series. A zero scale means
    that component is absent (pure RBF or pure Lorentzian peaks).
    """

    location: np.ndarray
    rbf_scale: np.ndarray
    lorentz_scale: np.ndarray
    amplitude: np.ndarray

    FIELDS = ('location', 'rbf_scale', 'lorentz_scale', 'amplitude')

    def __post_init__(self):
        for name in self.FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_peaks(self):
        return self.location.shape[-1]

    def __len__(self):
        return self.location.shape[0]

    def __getitem__(self, idx):
        return Particle(*(getattr(self, name)[idx] for name in self.FIELDS))

    def copy(self):
        return Particle(*(getattr(self, name).copy() for name in self.FIELDS))

    def as_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}


@dataclass(frozen=True)
class PriorSpec:
    """
    Full prior configuration for a fit.

    Parameters
    ----------
    location_means : tuple of float
        Predicted peak locations, cm^-1.
    location_sds : tuple of float, optional
        Prediction uncertainty per peak; defaults to 5 cm^-1 each.
    rbf_scale, lorentz_scale : ScalePrior
        Lognormal priors for the two broadening scales.
    amplitude_bound : float, optional
        Upper bound of the uniform amplitude prior. When None it is set to the
        range of the observed spectra at fit time.
    baseline : BaselineConfig
    noise : NoisePrior
    c_mlc : float, optional
        Monolayer-coverage concentration in nM; calibration concentrations
        must lie below it.
    peak_shape : {'pseudo_voigt', 'rbf', 'lorentz'}
    location_bounds : tuple of float, optional
        Truncation interval for the locations; set from the grid at fit time.

    """

    location_means: tuple
    location_sds: tuple = None
    rbf_scale: ScalePrior = DEFAULT_RBF_SCALE
    lorentz_scale: ScalePrior = DEFAULT_LORENTZ_SCALE
    amplitude_bound: float = None
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    noise: NoisePrior = field(default_factory=NoisePrior)
    c_mlc: float = None
    peak_shape: str = 'pseudo_voigt'
    location_bounds: tuple = None

    def __post_init__(self):
        means = tuple(float(v) for v in self.location_means)
        object.__setattr__(self, 'location_means', means)
        sds = self.location_sds
        if sds is None:
            sds = (DEFAULT_LOCATION_SD,) * len(means)
        elif np.isscalar(sds):
            sds = (float(sds),) * len(means)
        sds = tuple(float(v) for v in sds)
        object.__setattr__(self, 'location_sds', sds)
        if len(sds) != len(means):
            raise ConfigurationError('need one location sd per peak')
        if not all(np.isfinite(means)):
            raise ConfigurationError('location means must be finite')
        if any(not s > 0 for s in sds):
            raise ConfigurationError('location sds must be positive')
        if self.amplitude_bound is not None and not self.amplitude_bound > 0:
            raise ConfigurationError('amplitude bound must be positive')
        if self.c_mlc is not None and not self.c_mlc > 0:
            raise ConfigurationError('c_mlc must be positive')
        if self.peak_shape not in PEAK_SHAPES:
            raise ConfigurationError(f'peak_shape must be one of {PEAK_SHAPES}')
        if self.location_bounds is not None:
            lo, hi = map(float, self.location_bounds)
            if not lo < hi:
                raise ConfigurationError('location bounds must be increasing')
            outside = [m for m in means if not lo <= m <= hi]
            if outside:
                raise ConfigurationError(
                    f'predicted peak locations {outside} lie outside the window [{lo}, {hi}]'
                )
            object.__setattr__(self, 'location_bounds', (lo, hi))

    @property
    def n_peaks(self):
        return len(self.location_means)

    @property
    def uses_rbf(self):
        return self.peak_shape != 'lorentz'

    @property
    def uses_lorentz(self):
        return self.peak_shape != 'rbf'

    @property
    def resolved(self):
        return self.location_bounds is not None and self.amplitude_bound is not None

    def resolve(self, grid, spectra=None, amplitude_scale=1.0):
        """
        Fill in the data-dependent parts of the prior.

        Parameters
        ----------
        grid : numpy.ndarray
            Wavenumber grid; its end points become the location bounds.
        spectra : numpy.ndarray, optional
            Observed spectra; ``max - min`` gives the amplitude bound when none
            is set.
        amplitude_scale : float, optional
            Divides a data-derived amplitude bound (the largest concentration
            when the amplitudes are concentration slopes).

        """
        changes = {}
        if self.location_bounds is None:
            changes['location_bounds'] = (float(grid[0]), float(grid[-1]))
        if self.amplitude_bound is None:
            if spectra is None:
                raise ConfigurationError('an amplitude bound or observed spectra is required')
            spread = float(np.max(spectra) - np.min(spectra))
            if not spread > 0:
                raise ConfigurationError('observed spectra have zero range')
            changes['amplitude_bound'] = spread / amplitude_scale
        return replace(self, **changes) if changes else self

    def _require_resolved(self):
        if not self.resolved:
            raise ConfigurationError('prior spec is not resolved; call resolve() first')

    def to_dict(self):
        out = {
            'peaks': [{'location_mean': m, 'location_sd': s}
                      for m, s in zip(self.location_means, self.location_sds)],
            'rbf_scale': {'log_median': self.rbf_scale.log_median, 'log_sd': self.rbf_scale.log_sd},
            'lorentz_scale': {'log_median': self.lorentz_scale.log_median,
                              'log_sd': self.lorentz_scale.log_sd},
            'baseline': {'knot_spacing': self.baseline.knot_spacing, 'lambda': self.baseline.lam,
                         'ridge': self.baseline.ridge},
            'noise': {'a0': self.noise.a0, 'b0': self.noise.b0},
            'peak_shape': self.peak_shape,
        }
        if self.amplitude_bound is not None:
            out['amplitude_bound'] = self.amplitude_bound
        if self.c_mlc is not None:
            out['c_mlc'] = self.c_mlc
        if self.location_bounds is not None:
            out['location_bounds'] = list(self.location_bounds)
        return out

    @classmethod
    def from_dict(cls, data):
        """Build a spec from the priors-file document; missing fields take defaults."""
        if not isinstance(data, dict):
            raise ConfigurationError('priors document must be a JSON object')
        peaks = data.get('peaks')
        if not isinstance(peaks, list) or not peaks:
            raise ConfigurationError('priors document needs a non-empty "peaks" list')
        default_sd = data.get('location_sd', DEFAULT_LOCATION_SD)
        try:
            means = [float(pk['location_mean']) for pk in peaks]
            sds = [float(pk.get('location_sd', default_sd)) for pk in peaks]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f'bad peak entry in priors document: {exc}') from exc

        def scale_prior(key, default):
            entry = data.get(key)
            if entry is None:
                return default
            try:
                return ScalePrior(float(entry.get('log_median', default.log_median)),
                                  float(entry.get('log_sd', default.log_sd)))
            except (AttributeError, TypeError, ValueError) as exc:
                raise ConfigurationError(f'bad "{key}" entry: {exc}') from exc

        base = data.get('baseline', {}) or {}
        noise = data.get('noise', {}) or {}
        try:
            baseline = BaselineConfig(float(base.get('knot_spacing', 10.0)),
                                      float(base.get('lambda', 1e-2)),
                                      float(base.get('ridge', 1e-6)))
            noise_prior = NoisePrior(float(noise.get('a0', 1e-3)), float(noise.get('b0', 1e-3)))
        except (AttributeError, TypeError, ValueError) as exc:
            raise ConfigurationError(f'bad baseline or noise entry: {exc}') from exc
        bounds = data.get('location_bounds')
        return cls(
            location_means=tuple(means),
            location_sds=tuple(sds),
            rbf_scale=scale_prior('rbf_scale', DEFAULT_RBF_SCALE),
            lorentz_scale=scale_prior('lorentz_scale', DEFAULT_LORENTZ_SCALE),
            amplitude_bound=data.get('amplitude_bound'),
            baseline=baseline,
            noise=noise_prior,
            c_mlc=data.get('c_mlc'),
            peak_shape=data.get('peak_shape', 'pseudo_voigt'),
            location_bounds=None if bounds is None else tuple(bounds),
        )


def load_priors(path):
    """Read a priors JSON file."""
    try:
        with open(path, encoding='utf-8') as fp:
            data = json.load(fp)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f'{path}: invalid JSON ({exc})') from exc
    return PriorSpec.from_dict(data)


def _truncnorm_sample(rng, mean, sd, lo, hi, size):
    # inverse-CDF sampling restricted to [lo, hi]
    a = log_ndtr((lo - mean) / sd)
    b = log_ndtr((hi - mean) / sd)
    u = rng.random(size)
    p = np.exp(a) + u * (np.exp(b) - np.exp(a))
    x = mean + sd * ndtri(p)
    return np.clip(x, lo, hi)


def _log_trunc_mass(mean, sd, lo, hi):
    from scipy.special import ndtr
    mass = ndtr((hi - mean) / sd) - ndtr((lo - mean) / sd)
    return np.log(mass)


def sample_prior(spec, rng, size=None):
    """
    Draw peak parameters from the prior.

    Parameters
    ----------
    spec : PriorSpec
        A resolved spec (see :meth:`PriorSpec.resolve`).
    rng : numpy.random.Generator
    size : int, optional
        Number of particles. If None a single particle is returned.

    Returns
    -------
    Particle
        Fields of shape (P,) or (size, P).

    """
    spec._require_resolved()
    shape = (1 if size is None else size, spec.n_peaks)
    lo, hi = spec.location_bounds
    mean = np.array(spec.location_means)
    sd = np.array(spec.location_sds)
    location = _truncnorm_sample(rng, mean, sd, lo, hi, shape)
    rbf = spec.rbf_scale.sample(rng, shape) if spec.uses_rbf else np.zeros(shape)
    lor = spec.lorentz_scale.sample(rng, shape) if spec.uses_lorentz else np.zeros(shape)
    amp = spec.amplitude_bound * rng.random(shape)
    particle = Particle(location, rbf, lor, amp)
    return particle[0] if size is None else particle


def log_prior_density(particle, spec):
    """
    Log prior density of peak parameters.

    Returns ``-inf`` when any parameter is outside the support: a location
    outside the window, a non-positive scale, or an amplitude outside
    ``[0, amplitude_bound]``. A scale that is not part of the peak shape
    (for example the Lorentzian scale of pure RBF peaks) must be zero.
    """
    spec._require_resolved()
    lo, hi = spec.location_bounds
    mean = np.array(spec.location_means)
    sd = np.array(spec.location_sds)
    loc = particle.location
    z = (loc - mean) / sd
    logp = -0.5 * z**2 - np.log(sd) - LOG_SQRT_2PI - _log_trunc_mass(mean, sd, lo, hi)
    logp = np.where((loc >= lo) & (loc <= hi), logp, -np.inf)
    if spec.uses_rbf:
        logp = logp + spec.rbf_scale.logpdf(particle.rbf_scale)
    else:
        logp = np.where(particle.rbf_scale == 0, logp, -np.inf)
    if spec.uses_lorentz:
        logp = logp + spec.lorentz_scale.logpdf(particle.lorentz_scale)
    else:
        logp = np.where(particle.lorentz_scale == 0, logp, -np.inf)
    amp = particle.amplitude
    bound = spec.amplitude_bound
    logp = logp + np.where((amp >= 0) & (amp <= bound), -math.log(bound), -np.inf)
    return logp.sum(axis=-1)
