"""Peak broadening functions and the spectral signature.

All profiles are height-normalised: every broadening function equals 1 at
the peak location, so the amplitude of a peak is its height in the same
units as the spectrum.

The pseudo-Voigt follows the Thompson-Cox-Hastings construction. The RBF
(Gaussian-shaped) and Lorentzian scales define the component widths
``2 * psi * sqrt(2 ln 2)`` and ``2 * gamma``; these are combined into the
Voigt width by a fifth-order polynomial, the mixing proportion is a cubic in
the Lorentzian share of that width, and both components of the mixture are
evaluated at the combined width. The pure RBF (``gamma == 0``) and pure
Lorentzian (``psi == 0``) limits are handled exactly.
"""

from dataclasses import dataclass

import numpy as np

from ._compat import HAS_NUMBA, njit
from .errors import DomainError

SQRT_2LN2 = np.sqrt(2.0 * np.log(2.0))

# Thompson-Cox-Hastings coefficients
_TCH_WIDTH = (2.69269, 2.42843, 4.47163, 0.07842)
_TCH_ETA = (1.36603, -0.47719, 0.11116)

PEAK_SHAPES = ('pseudo_voigt', 'rbf', 'lorentz')


def check_grid(values):
    """
    Validate a wavenumber grid.

    Parameters
    ----------
    values : array-like, shape (n,)
        Wavenumbers in cm^-1.

    Returns
    -------
    numpy.ndarray, shape (n,)
        The grid as a float array.

    Raises
    ------
    DomainError
        If the grid has fewer than two points, is not strictly increasing, or
        contains non-finite or non-positive values.

    """
    grid = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise DomainError('a wavenumber grid needs at least two points')
    if not np.all(np.isfinite(grid)):
        raise DomainError('wavenumber grid contains non-finite values')
    if grid[0] <= 0:
        raise DomainError('wavenumbers must be positive')
    if np.any(np.diff(grid) <= 0):
        raise DomainError('wavenumber grid must be strictly increasing')
    return grid


@dataclass(frozen=True)
class PeakParams:
    """
    Parameters of one peak.

    ``amplitude`` is the peak height; in a calibration context it holds the
    slope of height against concentration instead.
    """

    location: float
    rbf_scale: float
    lorentz_scale: float
    amplitude: float = 1.0

    def __post_init__(self):
        values = (self.location, self.rbf_scale, self.lorentz_scale, self.amplitude)
        if not all(np.isfinite(v) for v in values):
            raise DomainError('peak parameters must be finite')
        if self.rbf_scale < 0 or self.lorentz_scale < 0:
            raise DomainError('peak scales must be non-negative')
        if self.rbf_scale == 0 and self.lorentz_scale == 0:
            raise DomainError('at least one peak scale must be positive')
        if self.amplitude < 0:
            raise DomainError('peak amplitude must be non-negative')

    @property
    def fwhm(self):
        return float(fwhm(self.rbf_scale, self.lorentz_scale))


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DomainError('inputs must be finite')


def eval_rbf(nu, location, scale):
    """Height-normalised RBF profile ``exp(-(nu - location)^2 / (2 scale^2))``."""
    nu, location, scale = np.asarray(nu, float), np.asarray(location, float), np.asarray(scale, float)
    _check_finite(nu, location, scale)
    if np.any(scale <= 0):
        raise DomainError('RBF scale must be positive')
    return np.exp(-0.5 * ((nu - location) / scale)**2)


def eval_lorentz(nu, location, scale):
    """Height-normalised Lorentzian ``scale^2 / ((nu - location)^2 + scale^2)``."""
    nu, location, scale = np.asarray(nu, float), np.asarray(location, float), np.asarray(scale, float)
    _check_finite(nu, location, scale)
    if np.any(scale <= 0):
        raise DomainError('Lorentzian scale must be positive')
    scale_sq = scale * scale
    return scale_sq / ((nu - location)**2 + scale_sq)


def _voigt_width(rbf_scale, lorentz_scale):
    g = 2.0 * SQRT_2LN2 * rbf_scale
    lor = 2.0 * lorentz_scale
    c1, c2, c3, c4 = _TCH_WIDTH
    total = (g**5 + c1 * g**4 * lor + c2 * g**3 * lor**2 + c3 * g**2 * lor**3
             + c4 * g * lor**4 + lor**5)
    width = total**0.2
    # exact pure-component limits
    width = np.where(lorentz_scale == 0, g, width)
    return np.where(rbf_scale == 0, lor, width)


def _mixing(rbf_scale, lorentz_scale, width):
    q = 2.0 * lorentz_scale / np.where(width > 0, width, 1.0)
    a1, a2, a3 = _TCH_ETA
    eta = np.clip(a1 * q + a2 * q**2 + a3 * q**3, 0.0, 1.0)
    eta = np.where(lorentz_scale == 0, 0.0, eta)
    return np.where(rbf_scale == 0, 1.0, eta)


def _check_scales(rbf_scale, lorentz_scale):
    rbf_scale = np.asarray(rbf_scale, dtype=float)
    lorentz_scale = np.asarray(lorentz_scale, dtype=float)
    _check_finite(rbf_scale, lorentz_scale)
    if np.any(rbf_scale < 0) or np.any(lorentz_scale < 0):
        raise DomainError('peak scales must be non-negative')
    if np.any((rbf_scale == 0) & (lorentz_scale == 0)):
        raise DomainError('RBF and Lorentzian scales cannot both be zero')
    return rbf_scale, lorentz_scale


def mixing_proportion(rbf_scale, lorentz_scale):
    """
    Lorentzian weight of the pseudo-Voigt mixture.

    Parameters
    ----------
    rbf_scale, lorentz_scale : float or array-like
        Non-negative scales, not both zero.

    Returns
    -------
    float or numpy.ndarray
        Mixing proportion in [0, 1]; 0 for a pure RBF, 1 for a pure Lorentzian.

    """
    rbf_scale, lorentz_scale = _check_scales(rbf_scale, lorentz_scale)
    eta = _mixing(rbf_scale, lorentz_scale, _voigt_width(rbf_scale, lorentz_scale))
    return eta[()] if eta.ndim == 0 else eta


def fwhm(rbf_scale, lorentz_scale):
    """
    Full width at half maximum of the pseudo-Voigt peak, in cm^-1.

    Equals ``2 * rbf_scale * sqrt(2 ln 2)`` for a pure RBF and
    ``2 * lorentz_scale`` for a pure Lorentzian.
    """
    rbf_scale, lorentz_scale = _check_scales(rbf_scale, lorentz_scale)
    width = _voigt_width(rbf_scale, lorentz_scale)
    return width[()] if width.ndim == 0 else width


def _profile(nu, location, rbf_scale, lorentz_scale):
    # unchecked; location/scales broadcast against nu
    diff = nu - location
    width = _voigt_width(rbf_scale, lorentz_scale)
    eta = _mixing(rbf_scale, lorentz_scale, width)
    pure_rbf = lorentz_scale == 0
    pure_lor = rbf_scale == 0
    # component widths: the combined width, or the exact scale in a pure limit
    sigma = np.where(pure_rbf, rbf_scale, width / (2.0 * SQRT_2LN2))
    sigma = np.where(pure_lor, 1.0, sigma)
    half = np.where(pure_lor, lorentz_scale, 0.5 * width)
    half_sq = np.where(pure_rbf, 1.0, half)**2
    gauss = np.exp(-0.5 * (diff / sigma)**2)
    lorentz = half_sq / (diff**2 + half_sq)
    if np.any(pure_lor):
        gauss = np.where(pure_lor, 0.0, gauss)
    if np.any(pure_rbf):
        lorentz = np.where(pure_rbf, 0.0, lorentz)
    return eta * lorentz + (1.0 - eta) * gauss


def eval_pseudo_voigt(nu, peak_or_location, rbf_scale=None, lorentz_scale=None):
    """
    Evaluate a height-normalised pseudo-Voigt peak.

    Parameters
    ----------
    nu : float or array-like
        Wavenumbers.
    peak_or_location : PeakParams or float
        Either a full parameter set, or the peak location when the two scales
        are passed separately.
    rbf_scale, lorentz_scale : float, optional
        Scales, required when `peak_or_location` is a location.

    Returns
    -------
    float or numpy.ndarray
        Profile values; exactly 1 at the peak location.

    """
    if isinstance(peak_or_location, PeakParams):
        peak = peak_or_location
        location, rbf_scale, lorentz_scale = peak.location, peak.rbf_scale, peak.lorentz_scale
    else:
        location = peak_or_location
        if rbf_scale is None or lorentz_scale is None:
            raise TypeError('both scales are required when passing a location')
    nu = np.asarray(nu, dtype=float)
    location = np.asarray(location, dtype=float)
    _check_finite(nu, location)
    rbf_scale, lorentz_scale = _check_scales(rbf_scale, lorentz_scale)
    if np.all(lorentz_scale == 0):
        return eval_rbf(nu, location, rbf_scale)
    if np.all(rbf_scale == 0):
        return eval_lorentz(nu, location, lorentz_scale)
    out = _profile(nu, location, rbf_scale, lorentz_scale)
    return out[()] if out.ndim == 0 else out


@njit(cache=True)
def _signature_kernel(grid, location, amplitude, eta, inv_two_var, half_sq, out):
    n_sets, n_peaks = location.shape
    for q in range(n_sets):
        for p in range(n_peaks):
            amp = amplitude[q, p]
            w_lor = amp * eta[q, p]
            w_rbf = amp * (1.0 - eta[q, p])
            loc = location[q, p]
            c = inv_two_var[q, p]
            h = half_sq[q, p]
            for j in range(grid.size):
                d2 = (grid[j] - loc)**2
                val = w_lor * (h / (d2 + h))
                arg = d2 * c
                # exp underflows to exactly zero beyond this point
                if arg < 745.2:
                    val += w_rbf * np.exp(-arg)
                out[q, j] += val


def signature_batch(grid, location, rbf_scale, lorentz_scale, amplitude, out=None):
    """
    Signatures for a batch of parameter sets without input validation.

    Parameters
    ----------
    grid : numpy.ndarray, shape (n,)
        Wavenumbers.
    location, rbf_scale, lorentz_scale, amplitude : numpy.ndarray, shape (Q, P)
        Peak parameters for Q parameter sets of P peaks each.
    out : numpy.ndarray, shape (Q, n), optional
        Output buffer.

    Returns
    -------
    numpy.ndarray, shape (Q, n)

    """
    n_sets, n_peaks = location.shape
    if out is None:
        out = np.zeros((n_sets, grid.size))
    else:
        out[...] = 0.0
    if HAS_NUMBA:
        width = _voigt_width(rbf_scale, lorentz_scale)
        eta = _mixing(rbf_scale, lorentz_scale, width)
        pure_rbf = lorentz_scale == 0
        pure_lor = rbf_scale == 0
        sigma = np.where(pure_rbf, rbf_scale, width / (2.0 * SQRT_2LN2))
        sigma = np.where(pure_lor, 1.0, sigma)
        half = np.where(pure_lor, lorentz_scale, 0.5 * width)
        half_sq = np.where(pure_rbf, 1.0, half)**2
        _signature_kernel(
            np.ascontiguousarray(grid, dtype=float), np.ascontiguousarray(location, dtype=float),
            np.ascontiguousarray(amplitude, dtype=float), np.ascontiguousarray(eta),
            np.ascontiguousarray(0.5 / sigma**2), np.ascontiguousarray(half_sq), out,
        )
        return out
    for p in range(n_peaks):
        prof = _profile(grid, location[:, p, None], rbf_scale[:, p, None],
                        lorentz_scale[:, p, None])
        prof *= amplitude[:, p, None]
        out += prof
    return out


def signature(grid, peaks):
    """
    Evaluate the spectral signature, the sum of amplitude-weighted peaks.

    Parameters
    ----------
    grid : array-like, shape (n,)
        Strictly increasing wavenumbers.
    peaks : sequence of PeakParams
        The peaks; must be non-empty.

    Returns
    -------
    numpy.ndarray, shape (n,)
        Signature intensity at each wavenumber.

    """
    grid = check_grid(grid)
    peaks = list(peaks)
    if not peaks:
        raise DomainError('signature needs at least one peak')
    cols = np.array([[pk.location, pk.rbf_scale, pk.lorentz_scale, pk.amplitude] for pk in peaks]).T
    return signature_batch(grid, *(c[None, :] for c in cols))[0]
