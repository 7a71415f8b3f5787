"""
Fit one synthetic spectrum
==========================

Five peaks on a sinusoidal background, 2401 wavenumbers, noise sd 2.
The sampler tempers from the prior to the posterior; the baseline is
integrated out analytically at every step, so only the peak parameters
are carried by the particles.

Run with ``python3 demos/single_spectrum.py [particles]``.
"""

import sys

import numpy as np

from ramansmc import PriorSpec, SmcConfig, fit_single, summarize, synth

n_particles = int(sys.argv[1]) if len(sys.argv) > 1 else 500

truth = synth.desk_tamra_truth()
data = synth.generate(truth, seed=1)

# prior locations are deliberately a few cm^-1 off the truth
spec = PriorSpec(synth.DESK_TAMRA_PREDICTIONS)
cloud = fit_single(data.grid, data.intensities[0], spec, SmcConfig(n_particles=n_particles, seed=3))

ladder = [rec['kappa'] for rec in cloud.trace]
print(f'{len(ladder)} tempering steps, {sum(r["resampled"] for r in cloud.trace)} resample-move steps')
print(f'log evidence {cloud.log_evidence:.1f}, {cloud.wall_time:.1f} s\n')

summary = summarize(cloud, data.grid, data.intensities, seed=3)
print(summary.to_markdown())

print('truth:')
for p in truth.peaks:
    print(f'  location {p.location:7.1f}  height {p.amplitude:6.1f}  FWHM {p.fwhm:5.1f}')

# the median baseline is a smooth curve under the peaks
lo, mid, hi = summary.baseline_curves
err = mid - truth.baseline(data.grid)
print(f'\nbaseline median vs truth: rms {np.sqrt(np.mean(err**2)):.2f} a.u., '
      f'mean 90% band width {np.mean(hi - lo):.2f} a.u.')
