"""Penalised cubic B-spline baseline with conjugate marginalisation.

The baseline of each spectrum is ``B @ alpha`` for a cubic B-spline basis
``B`` on equally spaced knots. Conditional on the noise variance ``sigma2``
the coefficients have the Gaussian prior

    alpha | sigma2 ~ N(0, sigma2 * (n * lam * D^T D + ridge * I)^-1)

with ``D`` the second-difference operator, and ``sigma2`` has an
inverse-gamma prior. Both are integrated out analytically. Every matrix
involved is banded (bandwidth 3 at most), so the marginal likelihood and the
conditional posterior draws cost O(n) in the number of wavenumbers.

Banded matrices use LAPACK upper storage: ``ab[u + i - j, j] = a[i, j]``
for ``j - u <= i <= j``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.linalg.lapack import dtbtrs
from scipy.special import gammaln

from .errors import ConfigurationError, NumericalError
from .peaks import check_grid

SPLINE_DEGREE = 3
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NoisePrior:
    """Inverse-gamma prior ``sigma2 ~ InvGamma(a0, b0)``."""

    a0: float = 1e-3
    b0: float = 1e-3

    def __post_init__(self):
        if not (self.a0 > 0 and self.b0 > 0):
            raise ConfigurationError('noise prior shape and rate must be positive')


def make_knots(grid, knot_spacing):
    """
    Equally spaced knots covering the grid, padded for a cubic basis.

    The interior knots start at ``grid[0]`` and continue at `knot_spacing`
    until they reach or pass ``grid[-1]``; three more knots are added beyond
    each end.
    """
    grid = check_grid(grid)
    if not knot_spacing > 0:
        raise ConfigurationError('knot spacing must be positive')
    span = grid[-1] - grid[0]
    if knot_spacing > span * (1 + 1e-9):
        raise ConfigurationError(
            f'knot spacing {knot_spacing} exceeds the grid range {span}'
        )
    n_intervals = int(np.ceil(span / knot_spacing - 1e-9))
    steps = np.arange(-SPLINE_DEGREE, n_intervals + SPLINE_DEGREE + 1)
    return grid[0] + knot_spacing * steps, n_intervals


def _cox_de_boor(x, knots, n_intervals):
    """Nonzero cubic B-spline values at `x` by the Cox-de Boor recurrence.

    Returns the index of the first nonzero basis function for each point and
    an array of shape (len(x), 4) with the values of that basis function and
    the next three.
    """
    k = SPLINE_DEGREE
    # knots[k + j] <= x < knots[k + j + 1]; the right end uses the last interval
    left = np.searchsorted(knots, x, side='right') - 1
    left = np.clip(left, k, k + n_intervals - 1)
    values = np.zeros((x.size, k + 1))
    values[:, 0] = 1.0
    for degree in range(1, k + 1):
        saved = np.zeros(x.size)
        for r in range(degree):
            right_knot = knots[left + r + 1]
            left_knot = knots[left + r + 1 - degree]
            term = values[:, r] / (right_knot - left_knot)
            values[:, r] = saved + (right_knot - x) * term
            saved = (x - left_knot) * term
        values[:, degree] = saved
    return left - k, values


def banded_to_dense(ab):
    """Expand a symmetric matrix stored in upper banded form."""
    u, m = ab.shape[0] - 1, ab.shape[1]
    dense = np.zeros((m, m))
    for offset in range(u + 1):
        diag = ab[u - offset, offset:]
        idx = np.arange(m - offset)
        dense[idx, idx + offset] = diag
        dense[idx + offset, idx] = diag
    return dense


def build_penalty(n_splines, ridge=0.0):
    """
    Second-difference penalty ``D^T D + ridge * I`` in upper banded storage.

    Parameters
    ----------
    n_splines : int
        Number of spline coefficients, at least 3.
    ridge : float, optional
        Non-negative value added to the diagonal. Default is 0.

    Returns
    -------
    numpy.ndarray, shape (3, n_splines)
        Banded matrix with bandwidth 2.

    """
    if n_splines < 3:
        raise ConfigurationError('the second-difference penalty needs at least 3 splines')
    if ridge < 0:
        raise ConfigurationError('ridge must be non-negative')
    m = n_splines
    ab = np.zeros((3, m))
    # row (1, -2, 1) of D at columns k, k+1, k+2
    for row in range(m - 2):
        coef = (1.0, -2.0, 1.0)
        for a in range(3):
            for b in range(a, 3):
                ab[2 - (b - a), row + b] += coef[a] * coef[b]
    ab[2] += ridge
    return ab


@dataclass(frozen=True, eq=False)
class BaselineModel:
    """
    Cubic B-spline basis and smoothness prior on a fixed wavenumber grid.

    Parameters
    ----------
    grid : numpy.ndarray, shape (n,)
    knots : numpy.ndarray
        Full knot vector including the three padding knots on each side.
    knot_spacing : float
    basis_start : numpy.ndarray of int, shape (n,)
        Column of the first nonzero basis function on each row.
    basis_values : numpy.ndarray, shape (n, 4)
        The four nonzero basis values on each row.
    lam : float
        Smoothing penalty; the prior precision includes ``n * lam * D^T D``.
    ridge : float
        Diagonal ridge making the prior proper.

    """

    grid: np.ndarray
    knots: np.ndarray
    knot_spacing: float
    basis_start: np.ndarray
    basis_values: np.ndarray
    lam: float = 1e-2
    ridge: float = 1e-6

    @property
    def n_points(self):
        return self.grid.size

    @property
    def n_splines(self):
        return self.knots.size - SPLINE_DEGREE - 1

    @cached_property
    def basis(self):
        """Sparse CSR basis matrix, shape (n, M)."""
        n = self.n_points
        cols = self.basis_start[:, None] + np.arange(SPLINE_DEGREE + 1)
        rows = np.repeat(np.arange(n), SPLINE_DEGREE + 1)
        return sparse.csr_matrix(
            (self.basis_values.ravel(), (rows, cols.ravel())), shape=(n, self.n_splines)
        )

    @cached_property
    def penalty(self):
        """``D^T D`` in banded storage, shape (3, M)."""
        return build_penalty(self.n_splines, 0.0)

    def prior_precision(self):
        """Banded ``n * lam * D^T D + ridge * I`` padded to bandwidth 3."""
        ab = np.zeros((SPLINE_DEGREE + 1, self.n_splines))
        ab[1:] = self.n_points * self.lam * self.penalty
        ab[-1] += self.ridge
        return ab

    def gram(self):
        """Banded ``B^T B``, shape (4, M)."""
        k = SPLINE_DEGREE
        ab = np.zeros((k + 1, self.n_splines))
        vals, start = self.basis_values, self.basis_start
        for a in range(k + 1):
            for b in range(a, k + 1):
                np.add.at(ab[k - (b - a)], start + b, vals[:, a] * vals[:, b])
        return ab

    def posterior_precision(self):
        """Banded ``n * lam * D^T D + ridge * I + B^T B``."""
        return self.prior_precision() + self.gram()

    def project(self, values):
        """``B^T @ values`` for values of shape (n,) or (n, k)."""
        return self.basis.T @ values

    def evaluate(self, coefs):
        """Baseline ``B @ coefs`` for coefs of shape (M,) or (M, k)."""
        return self.basis @ coefs

    def with_penalty(self, lam=None, ridge=None):
        """Copy of the model with a different smoothing penalty or ridge."""
        return BaselineModel(
            self.grid, self.knots, self.knot_spacing, self.basis_start, self.basis_values,
            self.lam if lam is None else lam, self.ridge if ridge is None else ridge,
        )


def build_basis(grid, knot_spacing=10.0, lam=1e-2, ridge=1e-6):
    """
    Build the cubic B-spline baseline model on a grid.

    Parameters
    ----------
    grid : array-like, shape (n,)
        Strictly increasing wavenumbers.
    knot_spacing : float, optional
        Distance between knots in cm^-1. Default is 10.
    lam : float, optional
        Smoothing penalty. Default is 1e-2.
    ridge : float, optional
        Ridge added to the prior precision. Default is 1e-6.

    Returns
    -------
    BaselineModel

    Raises
    ------
    ConfigurationError
        If the spacing is not positive or exceeds the range of the grid.

    """
    grid = check_grid(grid)
    if lam < 0 or ridge < 0:
        raise ConfigurationError('smoothing penalty and ridge must be non-negative')
    knots, n_intervals = make_knots(grid, knot_spacing)
    start, values = _cox_de_boor(grid, knots, n_intervals)
    return BaselineModel(grid, knots, float(knot_spacing), start, values, float(lam), float(ridge))


def banded_cholesky(ab, what='matrix'):
    """Upper banded Cholesky factor, raising NumericalError on failure."""
    try:
        return cholesky_banded(ab, lower=False)
    except LinAlgError as exc:
        diag = ab[-1]
        raise NumericalError(
            f'{what} is not numerically positive definite '
            f'(size {ab.shape[1]}, diagonal range [{diag.min():.3g}, {diag.max():.3g}]): {exc}'
        ) from exc


def banded_logdet(factor):
    """Log-determinant of ``U^T U`` from its upper banded factor ``U``."""
    return 2.0 * np.sum(np.log(factor[-1]))


def solve_upper(factor, rhs):
    """Solve ``U x = rhs`` with the banded upper factor ``U``."""
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    x, info = dtbtrs(factor, rhs[:, None] if vec else rhs, uplo='U', trans='N')
    if info != 0:
        raise NumericalError(f'triangular solve failed (info={info})')
    return x[:, 0] if vec else x


@dataclass(frozen=True, eq=False)
class MarginalResult:
    """
    Output of :func:`marginal_log_likelihood`.

    Attributes
    ----------
    log_marginal : float
        Log density of the residual with baseline and noise integrated out.
    precision_factor : numpy.ndarray
        Upper banded Cholesky factor of the posterior precision.
    mean : numpy.ndarray, shape (M,)
        Posterior mean of the spline coefficients.
    shape, rate : float
        Inverse-gamma posterior parameters of the noise variance.

    """

    log_marginal: float
    precision_factor: np.ndarray
    mean: np.ndarray
    shape: float
    rate: float


def marginal_log_likelihood(residual, model, noise=None):
    """
    Log marginal likelihood of a residual spectrum under the baseline model.

    The residual ``r`` (observed spectrum minus the spectral signature) is
    modelled as ``B alpha + eps`` with ``eps ~ N(0, sigma2 I)``; the spline
    coefficients and the noise variance are integrated out under their
    conjugate priors.

    Parameters
    ----------
    residual : array-like, shape (n,)
    model : BaselineModel
        Built on the same grid as the residual.
    noise : NoisePrior, optional
        Default is ``NoisePrior()``.

    Returns
    -------
    MarginalResult

    Raises
    ------
    NumericalError
        If the prior or posterior precision is not positive definite.

    """
    noise = NoisePrior() if noise is None else noise
    r = np.asarray(residual, dtype=float)
    n = model.n_points
    if r.shape != (n,):
        raise ConfigurationError(f'residual has shape {r.shape}, expected ({n},)')
    prior_ab = model.prior_precision()
    post_ab = prior_ab + model.gram()
    prior_factor = banded_cholesky(prior_ab, 'prior precision')
    post_factor = banded_cholesky(post_ab, 'posterior precision')

    proj = model.project(r)
    mean = cho_solve_banded((post_factor, False), proj)
    shape = noise.a0 + 0.5 * n
    rate = noise.b0 + 0.5 * (r @ r - proj @ mean)
    log_marginal = (
        0.5 * banded_logdet(prior_factor) - 0.5 * banded_logdet(post_factor)
        + noise.a0 * np.log(noise.b0) - shape * np.log(rate)
        + gammaln(shape) - gammaln(noise.a0) - 0.5 * n * LOG_2PI
    )
    return MarginalResult(float(log_marginal), post_factor, mean, float(shape), float(rate))


def sample_baseline_and_noise(result, rng, size=None):
    """
    Draw spline coefficients and noise variance from their joint posterior.

    Parameters
    ----------
    result : MarginalResult
    rng : numpy.random.Generator
    size : int, optional
        Number of draws. If None, a single draw is returned.

    Returns
    -------
    coefs : numpy.ndarray, shape (M,) or (size, M)
    sigma2 : float or numpy.ndarray, shape (size,)

    """
    k = 1 if size is None else size
    sigma2 = 1.0 / rng.gamma(result.shape, 1.0 / result.rate, size=k)
    z = rng.standard_normal((result.mean.size, k))
    coefs = result.mean[:, None] + solve_upper(result.precision_factor, z) * np.sqrt(sigma2)
    if size is None:
        return coefs[:, 0], float(sigma2[0])
    return coefs.T, sigma2
