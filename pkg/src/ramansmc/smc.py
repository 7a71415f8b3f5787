"""Likelihood-tempered SMC and IBIS for spectral decomposition.

A cloud of weighted particles moves from the prior to the posterior by
raising the (baseline- and noise-marginalised) likelihood to a temperature
``kappa`` that increases adaptively from 0 to 1. Each temperature step
reweights the particles; when the effective sample size drops below a
threshold they are resampled (residual resampling) and refreshed with
random-walk Metropolis moves that leave the current tempered posterior
invariant.

For several spectra the same machinery runs once per observation (IBIS):
earlier observations enter the target at full weight, the newest one is
tempered, and later ones are ignored.

Randomness is drawn centrally from generators keyed on ``(seed, stage,
observation, step, sweep)``, so row ``q`` of every random array belongs to
particle ``q`` no matter how the likelihood work is split across threads.
"""

from dataclasses import dataclass, field, replace
import time

import numpy as np
from scipy.special import expit, logit, logsumexp

from .baseline import build_basis
from .errors import ConfigurationError, DomainError, NumericalError, StateError
from .likelihood import SpectralLikelihood
from .priors import Particle, log_prior_density, sample_prior

_STAGES = {'init': 0, 'resample': 1, 'mutate': 2, 'summary': 3}


def substream(seed, stage, *counters):
    """Generator for one stage of a run, keyed on the seed and step counters."""
    key = [int(seed), _STAGES[stage], *(int(c) for c in counters)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class SmcConfig:
    """
    Sampler settings.

    Parameters
    ----------
    n_particles : int
        Number of particles Q, at least 2.
    target_ess_ratio : float
        Each temperature step aims to multiply the ESS by this factor.
    resample_threshold : float
        Resample when the ESS falls below this fraction of Q.
    mutation_steps : int
        Metropolis sweeps after each resampling.
    mutate_always : bool
        Also run the sweeps after temperature steps that do not resample.
    proposal_scale : float
        Multiplies the ``2.38 / sqrt(d)`` random-walk scale.
    seed : int
    threads : int
        Worker threads for likelihood evaluation; does not change results.

    """

    n_particles: int = 1000
    target_ess_ratio: float = 0.9
    resample_threshold: float = 0.5
    mutation_steps: int = 5
    proposal_scale: float = 1.0
    seed: int = 0
    threads: int = 1
    mutate_always: bool = False

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 2:
            raise ConfigurationError('need at least 2 particles')
        if not 0 < self.target_ess_ratio < 1:
            raise ConfigurationError('target ESS ratio must lie in (0, 1)')
        if not 0 < self.resample_threshold <= 1:
            raise ConfigurationError('resample threshold must lie in (0, 1]')
        if int(self.mutation_steps) != self.mutation_steps or self.mutation_steps < 1:
            raise ConfigurationError('need at least one mutation step')
        if not self.proposal_scale >= 0:
            raise ConfigurationError('proposal scale must be non-negative')
        if self.threads < 1:
            raise ConfigurationError('threads must be at least 1')

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            'n_particles', 'target_ess_ratio', 'resample_threshold', 'mutation_steps',
            'proposal_scale', 'seed', 'threads', 'mutate_always')}


@dataclass
class ParticleCloud:
    """
    Weighted particle population.

    Attributes
    ----------
    particles : Particle
        Peak parameters, fields of shape (Q, P).
    weights : numpy.ndarray, shape (Q,)
        Normalised importance weights.
    loglik : numpy.ndarray, shape (Q, N_active)
        Cached per-observation log marginal likelihoods.
    logprior : numpy.ndarray, shape (Q,)
        Cached log prior densities.
    kappa : float
        Temperature of the tempered likelihood term.
    n_seen : int
        Number of observations entering the target (the last one tempered).
    log_evidence : float
        Running estimate of the log normalising constant.
    batch : bool
        If True the whole product of the active likelihoods is tempered;
        otherwise only the newest observation is.
    spec : PriorSpec
        Resolved prior the cloud targets.
    concentrations : numpy.ndarray or None
        Calibration concentrations, or None for amplitude mode.
    trace : list of dict
        One record per temperature step.

    """

    particles: Particle
    weights: np.ndarray
    loglik: np.ndarray
    logprior: np.ndarray
    kappa: float = 0.0
    n_seen: int = 0
    log_evidence: float = 0.0
    batch: bool = False
    spec: object = None
    concentrations: np.ndarray = None
    trace: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def n_particles(self):
        return self.weights.size

    @property
    def calibration(self):
        return self.concentrations is not None

    def tempered_loglik(self):
        if self.batch:
            return self.loglik.sum(axis=1)
        return self.loglik[:, -1]

    def fixed_loglik(self):
        if self.batch or self.loglik.shape[1] < 2:
            return np.zeros(self.n_particles)
        return self.loglik[:, :-1].sum(axis=1)

    def take(self, idx):
        """New cloud holding particles `idx` with uniform weights."""
        return replace(
            self, particles=self.particles[idx], weights=np.full(idx.size, 1.0 / idx.size),
            loglik=self.loglik[idx], logprior=self.logprior[idx], trace=self.trace,
        )


def ess(weights):
    """Effective sample size ``1 / sum(w^2)`` of normalised weights."""
    w = np.asarray(weights, dtype=float)
    total = np.sum(w * w)
    if w.size == 0 or not total > 0:
        raise DomainError('ESS is undefined for an all-zero weight vector')
    return 1.0 / total


def _tempered_weights(log_weights, loglik, delta):
    logw = log_weights + delta * loglik
    return np.exp(logw - logsumexp(logw))


def adapt_temperature(cloud, eta=0.9, max_iter=60):
    """
    Next temperature so the ESS shrinks by the factor `eta`.

    Bisects on the temperature increment over ``[kappa, 1]``. Returns 1 when
    even the full increment keeps the ESS at or above the target.

    Parameters
    ----------
    cloud : ParticleCloud
        Current cloud with ``kappa < 1``.
    eta : float, optional
        Target ratio of new to current ESS. Default is 0.9.
    max_iter : int, optional
        Bisection cap. Default is 60.

    Returns
    -------
    float

    """
    if not cloud.kappa < 1:
        raise StateError('cloud is already at temperature 1')
    loglik = cloud.tempered_loglik()
    with np.errstate(divide='ignore'):
        log_w = np.log(cloud.weights)
    target = eta * ess(cloud.weights)
    span = 1.0 - cloud.kappa
    if ess(_tempered_weights(log_w, loglik, span)) >= target:
        return 1.0
    lo, hi = 0.0, span
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ess(_tempered_weights(log_w, loglik, mid)) >= target:
            lo = mid
        else:
            hi = mid
    step = 0.5 * (lo + hi)
    if step <= 0.0:
        step = hi
    return min(cloud.kappa + step, 1.0)


def reweight(cloud, kappa_prev, kappa_next):
    """
    Incremental importance reweighting from `kappa_prev` to `kappa_next`.

    Updates the weights in place, sets the temperature and adds the log of the
    weighted mean incremental weight to ``cloud.log_evidence``.
    """
    delta = kappa_next - kappa_prev
    if delta < 0:
        raise DomainError('temperatures must not decrease')
    if delta == 0:
        cloud.kappa = kappa_next
        return cloud
    with np.errstate(divide='ignore'):
        logw = np.log(cloud.weights) + delta * cloud.tempered_loglik()
    lse = logsumexp(logw)
    if not np.isfinite(lse):
        raise NumericalError('all importance weights underflowed')
    w = np.exp(logw - lse)
    cloud.weights = w / w.sum()
    cloud.log_evidence += float(lse)
    cloud.kappa = kappa_next
    return cloud


def residual_resample(weights, n_out, rng):
    """
    Residual resampling.

    Particle ``q`` gets ``floor(n_out * w_q)`` copies; the remaining slots
    are drawn from a multinomial on the fractional remainders.

    Returns
    -------
    numpy.ndarray of int, shape (n_out,)
        Ancestor indices in increasing order.

    """
    w = np.asarray(weights, dtype=float)
    expected = n_out * w
    counts = np.floor(expected).astype(np.int64)
    remaining = n_out - int(counts.sum())
    if remaining > 0:
        resid = expected - counts
        resid = np.clip(resid, 0.0, None)
        counts += rng.multinomial(remaining, resid / resid.sum())
    return np.repeat(np.arange(w.size), counts)


@dataclass
class Target:
    """Likelihood, prior and shape information shared by the moves."""

    likelihood: SpectralLikelihood
    spec: object

    def __post_init__(self):
        spec = self.spec
        self.blocks = ['location']
        if spec.uses_rbf:
            self.blocks.append('rbf_scale')
        if spec.uses_lorentz:
            self.blocks.append('lorentz_scale')
        self.blocks.append('amplitude')

    @property
    def dim(self):
        return len(self.blocks) * self.spec.n_peaks

    def to_unconstrained(self, particle):
        bound = self.spec.amplitude_bound
        cols = []
        for name in self.blocks:
            vals = getattr(particle, name)
            if name == 'location':
                cols.append(vals)
            elif name == 'amplitude':
                frac = np.clip(vals / bound, 1e-300, 1.0 - 1e-16)
                cols.append(logit(frac))
            else:
                cols.append(np.log(vals))
        return np.concatenate(cols, axis=-1)

    def from_unconstrained(self, z):
        n_peaks = self.spec.n_peaks
        values = {'rbf_scale': np.zeros(z.shape[:-1] + (n_peaks,)),
                  'lorentz_scale': np.zeros(z.shape[:-1] + (n_peaks,))}
        for k, name in enumerate(self.blocks):
            part = z[..., k * n_peaks:(k + 1) * n_peaks]
            if name == 'location':
                values[name] = part.copy()
            elif name == 'amplitude':
                values[name] = self.spec.amplitude_bound * expit(part)
            else:
                values[name] = np.exp(part)
        return Particle(values['location'], values['rbf_scale'], values['lorentz_scale'],
                        values['amplitude'])

    def log_jacobian(self, particle):
        out = np.zeros(len(particle))
        for name in self.blocks:
            vals = getattr(particle, name)
            if name == 'amplitude':
                frac = vals / self.spec.amplitude_bound
                with np.errstate(divide='ignore'):
                    out += np.sum(np.log(vals) + np.log1p(-frac), axis=-1)
            elif name != 'location':
                out += np.sum(np.log(vals), axis=-1)
        return out

    def loglik(self, particle, n_seen):
        return self.likelihood.loglik(particle, np.arange(n_seen))


def _check_finite_loglik(loglik, offset=0):
    bad = ~np.isfinite(loglik)
    if np.any(bad):
        q, i = np.argwhere(bad)[0]
        raise NumericalError(
            f'non-finite log-likelihood for particle {q + offset} at observation {i}'
        )


def proposal_factor(z, weights, scale=1.0):
    """Cholesky factor of the random-walk proposal covariance.

    ``scale^2 * 2.38^2 / d`` times the weighted covariance of `z`, plus a
    small jitter; falls back to the diagonal when that is not positive
    definite.
    """
    dim = z.shape[1]
    if dim == 0:
        return np.zeros((0, 0))
    mean = weights @ z
    centred = z - mean
    cov = (centred * weights[:, None]).T @ centred
    cov = (scale**2 * 2.38**2 / dim) * cov + 1e-8 * np.eye(dim)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.diag(np.sqrt(np.diag(cov)))


def mutate(cloud, target, steps, rng, scale=1.0, factor=None):
    """
    Random-walk Metropolis sweeps on every particle.

    The chain targets ``fixed + kappa * tempered`` log-likelihood plus the
    log prior, in the unconstrained parameterisation (raw locations, log
    scales, logit of amplitude over its bound) with the Jacobian included.

    Parameters
    ----------
    cloud : ParticleCloud
    target : Target
    steps : int
        Number of sweeps.
    rng : numpy.random.Generator
    scale : float, optional
        Multiplier of the optimal-scaling step size.
    factor : numpy.ndarray, optional
        Cholesky factor of the proposal covariance; by default computed from
        the weighted cloud.

    Returns
    -------
    ParticleCloud
        The same cloud, updated in place. The acceptance rate of every sweep
        is appended to ``cloud.trace[-1]['acceptance']`` when a trace exists.

    """
    dim = target.dim
    if dim == 0:
        return cloud
    z = target.to_unconstrained(cloud.particles)
    if factor is None:
        factor = proposal_factor(z, cloud.weights, scale)
    n_seen = cloud.loglik.shape[1]
    kappa = cloud.kappa
    rates = []
    current_jac = target.log_jacobian(cloud.particles)
    for _ in range(steps):
        noise = rng.standard_normal((cloud.n_particles, dim))
        log_u = np.log(rng.random(cloud.n_particles))
        prop_z = z + noise @ factor.T
        proposal = target.from_unconstrained(prop_z)
        prop_prior = log_prior_density(proposal, target.spec)
        ok = np.isfinite(prop_prior)
        prop_ll = np.full((cloud.n_particles, n_seen), -np.inf)
        if np.any(ok):
            prop_ll[ok] = target.loglik(proposal[ok], n_seen)
        prop_jac = target.log_jacobian(proposal)

        def log_target(ll, prior, jac):
            if cloud.batch:
                like = kappa * ll.sum(axis=1)
            else:
                like = kappa * ll[:, -1]
                if n_seen > 1:
                    like = like + ll[:, :-1].sum(axis=1)
            return like + prior + jac

        with np.errstate(invalid='ignore'):
            log_ratio = (log_target(prop_ll, prop_prior, prop_jac)
                         - log_target(cloud.loglik, cloud.logprior, current_jac))
        accept = ok & (log_u < log_ratio)
        z[accept] = prop_z[accept]
        for name in Particle.FIELDS:
            getattr(cloud.particles, name)[accept] = getattr(proposal, name)[accept]
        cloud.loglik[accept] = prop_ll[accept]
        cloud.logprior[accept] = prop_prior[accept]
        current_jac[accept] = prop_jac[accept]
        rates.append(float(np.mean(accept)))
    if cloud.trace:
        cloud.trace[-1].setdefault('acceptance', []).extend(rates)
    return cloud


def _check_concentrations(concentrations, spec, n_obs):
    c = np.asarray(concentrations, dtype=float)
    if c.shape != (n_obs,):
        raise ConfigurationError(f'need {n_obs} concentrations, got {c.size}')
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise ConfigurationError('concentrations must be positive and finite')
    if spec.c_mlc is not None and np.any(c >= spec.c_mlc):
        bad = c[c >= spec.c_mlc]
        raise ConfigurationError(
            f'concentrations {bad.tolist()} nM reach the monolayer coverage c_MLC = {spec.c_mlc} nM; '
            'the signal saturates there and the linear amplitude model does not apply'
        )
    return c


def _prepare(grid, spectra, concentrations, priors, config):
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if spectra.shape[1] != grid.size:
        raise ConfigurationError('spectra and grid have different lengths')
    if concentrations is not None:
        concentrations = _check_concentrations(concentrations, priors, spectra.shape[0])
        scale = float(np.max(concentrations))
    else:
        scale = 1.0
    if priors.location_bounds is not None:
        lo, hi = priors.location_bounds
        if lo < grid[0] or hi > grid[-1]:
            raise ConfigurationError('location bounds extend beyond the wavenumber grid')
    spec = priors.resolve(grid, spectra, amplitude_scale=scale)
    outside = [m for m in spec.location_means if not grid[0] <= m <= grid[-1]]
    if outside:
        raise ConfigurationError(f'predicted peak locations {outside} lie outside the grid')
    model = build_basis(grid, spec.baseline.knot_spacing, spec.baseline.lam, spec.baseline.ridge)
    likelihood = SpectralLikelihood(spectra, model, spec.noise, concentrations, config.threads)
    return spec, likelihood, concentrations


def _initial_cloud(spec, config, concentrations, batch):
    q = config.n_particles
    particles = sample_prior(spec, substream(config.seed, 'init'), q)
    return ParticleCloud(
        particles=particles, weights=np.full(q, 1.0 / q), loglik=np.zeros((q, 0)),
        logprior=log_prior_density(particles, spec), batch=batch, spec=spec,
        concentrations=concentrations,
    )


def _temper(cloud, target, config, obs_tag):
    """Tempering loop from kappa = 0 to 1 for the current target."""
    q = cloud.n_particles
    cloud.kappa = 0.0
    step = 0
    while cloud.kappa < 1.0:
        ess_prev = ess(cloud.weights)
        kappa_prev = cloud.kappa
        kappa_next = adapt_temperature(cloud, config.target_ess_ratio)
        if not kappa_next > kappa_prev:
            raise NumericalError(f'temperature failed to increase from {kappa_prev}')
        reweight(cloud, kappa_prev, kappa_next)
        ess_now = ess(cloud.weights)
        record = {'observation': obs_tag, 'step': step, 'kappa': kappa_next,
                  'ess_before': ess_prev, 'ess_after': ess_now, 'resampled': False}
        cloud.trace.append(record)
        resample = ess_now < config.resample_threshold * q
        if resample or config.mutate_always:
            z = target.to_unconstrained(cloud.particles)
            factor = proposal_factor(z, cloud.weights, config.proposal_scale)
            if resample:
                idx = residual_resample(cloud.weights, q,
                                        substream(config.seed, 'resample', obs_tag, step))
                trace = cloud.trace
                cloud = cloud.take(idx)
                cloud.trace = trace
                record['resampled'] = True
            mutate(cloud, target, config.mutation_steps,
                   substream(config.seed, 'mutate', obs_tag, step), factor=factor)
        step += 1
    return cloud


def _add_observation(cloud, target, obs, chunk=None):
    new = target.likelihood.loglik(cloud.particles, [obs])
    _check_finite_loglik(new)
    cloud.loglik = np.hstack([cloud.loglik, new])
    cloud.n_seen += 1


def fit_ibis(grid, spectra, priors, config=None, concentrations=None, callback=None):
    """
    Sequential posterior over several spectra by iterated batch importance sampling.

    Parameters
    ----------
    grid : array-like, shape (n,)
    spectra : array-like, shape (N, n)
        Observations, processed in row order.
    priors : PriorSpec
    config : SmcConfig, optional
    concentrations : array-like, shape (N,), optional
        Dilution concentrations in nM. When given the particle amplitudes are
        concentration slopes; otherwise all spectra share peak heights.
    callback : callable, optional
        Called as ``callback(i, cloud)`` after observation ``i`` is absorbed.

    Returns
    -------
    ParticleCloud
        Weighted cloud at temperature 1 after the last observation.

    """
    config = SmcConfig() if config is None else config
    start = time.perf_counter()
    spec, likelihood, concentrations = _prepare(grid, spectra, concentrations, priors, config)
    target = Target(likelihood, spec)
    cloud = _initial_cloud(spec, config, concentrations, batch=False)
    for i in range(likelihood.n_obs):
        _add_observation(cloud, target, i)
        cloud = _temper(cloud, target, config, i)
        if callback is not None:
            callback(i, cloud)
    cloud.wall_time = time.perf_counter() - start
    return cloud


def fit_single(grid, spectrum, priors, config=None):
    """
    Fit one spectrum by likelihood-tempered SMC.

    Parameters
    ----------
    grid : array-like, shape (n,)
    spectrum : array-like, shape (n,)
    priors : PriorSpec
    config : SmcConfig, optional

    Returns
    -------
    ParticleCloud
        Final weighted cloud at temperature 1; ``log_evidence`` estimates the
        log marginal likelihood of the spectrum.

    """
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.ndim != 1:
        raise ConfigurationError('fit_single takes one spectrum')
    return fit_ibis(grid, spectrum[None, :], priors, config)


def fit_batch(grid, spectra, priors, config=None, concentrations=None):
    """
    Temper the joint likelihood of all spectra at once.

    The non-sequential counterpart of :func:`fit_ibis`, targeting the same
    posterior; useful as a cross-check.
    """
    config = SmcConfig() if config is None else config
    start = time.perf_counter()
    spec, likelihood, concentrations = _prepare(grid, spectra, concentrations, priors, config)
    target = Target(likelihood, spec)
    cloud = _initial_cloud(spec, config, concentrations, batch=True)
    cloud.loglik = likelihood.loglik(cloud.particles)
    _check_finite_loglik(cloud.loglik)
    cloud.n_seen = likelihood.n_obs
    cloud = _temper(cloud, target, config, 0)
    cloud.wall_time = time.perf_counter() - start
    return cloud
