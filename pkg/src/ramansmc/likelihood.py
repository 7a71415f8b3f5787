"""Vectorised baseline-marginalised likelihood for many particles at once.

For a shared grid the residual of observation ``i`` is ``y_i - c_i s`` where
``s`` is the particle's signature (``c_i = 1`` outside calibration). The
inverse-gamma rate of :func:`ramansmc.baseline.marginal_log_likelihood`
then expands into a quadratic in ``c_i``::

    r^T r - (B^T r)^T P^-1 (B^T r) = e0_i - 2 c_i z_i^T s + c_i^2 s^T (I - B P^-1 B^T) s

where ``z_i = y_i - B P^-1 B^T y_i`` and ``e0_i`` depend on the data only and
are computed once. A particle therefore costs one signature evaluation, one
banded solve and a product with the ``N x n`` matrix ``Z``, however many
observations are active.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.linalg import cho_solve_banded
from scipy.special import gammaln

from .baseline import LOG_2PI, NoisePrior, banded_cholesky, banded_logdet
from .errors import ConfigurationError
from .peaks import signature_batch

CHUNK_SIZE = 256


class SpectralLikelihood:
    """
    Per-observation log marginal likelihoods of peak parameters.

    Parameters
    ----------
    spectra : numpy.ndarray, shape (N, n)
        Observed intensities on the grid of `model`.
    model : BaselineModel
    noise : NoisePrior, optional
    concentrations : array-like, shape (N,), optional
        When given, the amplitudes of a particle are concentration slopes and
        observation ``i`` has peak heights ``c_i * amplitude``.
    threads : int, optional
        Worker threads. Work is split into fixed-size chunks of particles, so
        results do not depend on this number.

    """

    def __init__(self, spectra, model, noise=None, concentrations=None, threads=1):
        spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
        if spectra.shape[1] != model.n_points:
            raise ConfigurationError('spectra and baseline model have different grids')
        self.spectra = spectra
        self.model = model
        self.grid = model.grid
        self.noise = NoisePrior() if noise is None else noise
        n_obs, n = spectra.shape
        if concentrations is None:
            self.scales = np.ones(n_obs)
        else:
            self.scales = np.asarray(concentrations, dtype=float)
            if self.scales.shape != (n_obs,):
                raise ConfigurationError('need one concentration per observation')
        self.threads = max(1, int(threads))

        prior_factor = banded_cholesky(model.prior_precision(), 'prior precision')
        self.factor = banded_cholesky(model.posterior_precision(), 'posterior precision')
        self.basis_t = model.basis.T.tocsr()
        proj = self.basis_t @ spectra.T
        self.data_coefs = cho_solve_banded((self.factor, False), proj)
        self.e0 = np.einsum('ij,ij->i', spectra, spectra) - np.einsum('mi,mi->i', proj, self.data_coefs)
        self.smooth_resid = spectra - (model.basis @ self.data_coefs).T
        self.shape = self.noise.a0 + 0.5 * n
        self.log_const = (
            0.5 * banded_logdet(prior_factor) - 0.5 * banded_logdet(self.factor)
            + self.noise.a0 * np.log(self.noise.b0) + gammaln(self.shape)
            - gammaln(self.noise.a0) - 0.5 * n * LOG_2PI
        )

    @property
    def n_obs(self):
        return self.spectra.shape[0]

    def _chunks(self, n_items, fn):
        bounds = [(lo, min(lo + CHUNK_SIZE, n_items)) for lo in range(0, n_items, CHUNK_SIZE)]
        if self.threads == 1 or len(bounds) == 1:
            parts = [fn(lo, hi) for lo, hi in bounds]
        else:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(lambda b: fn(*b), bounds))
        return parts

    def _signature_terms(self, particle, lo, hi):
        sig = signature_batch(
            self.grid, particle.location[lo:hi], particle.rbf_scale[lo:hi],
            particle.lorentz_scale[lo:hi], particle.amplitude[lo:hi],
        )
        proj = self.basis_t @ sig.T
        coefs = cho_solve_banded((self.factor, False), proj)
        e2 = np.einsum('qj,qj->q', sig, sig) - np.einsum('mq,mq->q', proj, coefs)
        return sig, coefs, e2

    def rates(self, particle, obs=None):
        """
        Inverse-gamma posterior rates ``b_n`` for each particle and observation.

        Parameters
        ----------
        particle : Particle
            Batch with fields of shape (Q, P).
        obs : array-like of int, optional
            Observation indices; all observations by default.

        Returns
        -------
        numpy.ndarray, shape (Q, len(obs))

        """
        obs = np.arange(self.n_obs) if obs is None else np.asarray(obs, dtype=int)
        scales = self.scales[obs]
        resid = self.smooth_resid[obs]
        e0 = self.e0[obs]

        def work(lo, hi):
            if particle.n_peaks == 0:
                return np.broadcast_to(self.noise.b0 + 0.5 * e0, (hi - lo, obs.size)).copy()
            sig, _, e2 = self._signature_terms(particle, lo, hi)
            e1 = sig @ resid.T
            quad = e0 - 2.0 * scales * e1 + scales**2 * e2[:, None]
            return self.noise.b0 + 0.5 * quad

        return np.concatenate(self._chunks(len(particle), work), axis=0)

    def loglik(self, particle, obs=None):
        """Log marginal likelihoods, shape (Q, len(obs))."""
        rates = self.rates(particle, obs)
        with np.errstate(invalid='ignore', divide='ignore'):
            return self.log_const - self.shape * np.log(rates)

    def coefficient_means(self, particle, obs):
        """Posterior mean spline coefficients for observation `obs`, shape (Q, M)."""
        if particle.n_peaks == 0:
            return np.broadcast_to(self.data_coefs[:, obs], (len(particle), self.model.n_splines)).copy()

        def work(lo, hi):
            _, coefs, _ = self._signature_terms(particle, lo, hi)
            return (self.data_coefs[:, obs, None] - self.scales[obs] * coefs).T

        return np.concatenate(self._chunks(len(particle), work), axis=0)

    def signatures(self, particle, obs=None):
        """Signatures (scaled by the concentration of `obs` if given), shape (Q, n)."""
        sig = signature_batch(self.grid, particle.location, particle.rbf_scale,
                              particle.lorentz_scale, particle.amplitude)
        if obs is not None:
            sig *= self.scales[obs]
        return sig
