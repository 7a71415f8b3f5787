"""Bayesian decomposition of Raman spectra into peaks and a smooth baseline.

Peaks are pseudo-Voigt profiles, the baseline is a penalised cubic B-spline
that is integrated out analytically together with the noise variance, and the
peak parameters are sampled by likelihood-tempered sequential Monte Carlo.
Dilution studies are handled by sequential updating over spectra with peak
heights proportional to concentration, giving limits of detection.
"""

from .baseline import (BaselineModel, NoisePrior, build_basis, marginal_log_likelihood,
                       sample_baseline_and_noise)
from .calibration import PosteriorSummary, hpd_interval, lod_draws, summarize
from .errors import (ArchiveError, ConfigurationError, DomainError, InputDataError,
                     NumericalError, RamanSMCError, StateError)
from .peaks import (PeakParams, eval_lorentz, eval_pseudo_voigt, eval_rbf, fwhm,
                    mixing_proportion, signature)
from .priors import PriorSpec, ScalePrior, load_priors, sample_prior
from .smc import ParticleCloud, SmcConfig, fit_batch, fit_ibis, fit_single

__version__ = '0.1.0'
