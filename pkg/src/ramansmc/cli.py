"""Command-line interface: ``raman-smc fit | calibrate | simulate | report``.

Exit codes: 0 success, 2 input data error, 3 configuration error,
4 archive error, 1 numerical or other runtime failure.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .archive import read_archive, write_archive
from .calibration import summarize
from .data import read_concentrations_csv, read_spectra_csv, write_concentrations_csv, write_spectra_csv
from .errors import ArchiveError, ConfigurationError, DomainError, InputDataError, RamanSMCError
from .priors import load_priors
from .smc import SmcConfig, fit_ibis, fit_single
from . import synth

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_ARCHIVE = 4


def _sha256(path):
    h = hashlib.sha256()
    with open(path, 'rb') as fp:
        for block in iter(lambda: fp.read(1 << 20), b''):
            h.update(block)
    return h.hexdigest()


def _write_text(path, text):
    with open(path, 'w', encoding='utf-8', newline='') as fp:
        fp.write(text)


def _config(args):
    return SmcConfig(
        n_particles=args.particles, target_ess_ratio=args.target_ess_ratio,
        resample_threshold=args.resample_threshold, mutation_steps=args.mutation_steps,
        proposal_scale=args.proposal_scale, seed=args.seed, threads=args.threads,
        mutate_always=args.mutate_always,
    )


def _priors(args):
    spec = load_priors(args.priors)
    if args.lam is not None:
        if not args.lam > 0:
            raise ConfigurationError('--lambda must be positive')
        spec = replace(spec, baseline=replace(spec.baseline, lam=args.lam))
    return spec


def _trace_summary(cloud):
    ladder = {}
    for rec in cloud.trace:
        ladder.setdefault(str(rec['observation']), []).append(rec['kappa'])
    return {
        'kappa_ladder': ladder,
        'ess': [[rec['ess_before'], rec['ess_after']] for rec in cloud.trace],
        'acceptance': [rec.get('acceptance', []) for rec in cloud.trace],
        'n_steps': len(cloud.trace),
        'n_resample': sum(bool(rec['resampled']) for rec in cloud.trace),
        'log_evidence': cloud.log_evidence,
    }


def _emit(out, summary, files):
    _write_text(os.path.join(out, 'summary.csv'), summary.to_csv())
    _write_text(os.path.join(out, 'summary.md'), summary.to_markdown())
    _write_text(os.path.join(out, 'fit_curves.csv'), summary.curves_csv())
    files.extend(['summary.csv', 'summary.md', 'fit_curves.csv'])


def _finish(args, command, cloud, spectra, config, inputs, extra):
    out = args.out
    os.makedirs(out, exist_ok=True)
    files = ['posterior.bin']
    write_archive(os.path.join(out, 'posterior.bin'), cloud, spectra.grid, spectra.intensities,
                  config, spectra.names, extra)
    summary = summarize(cloud, spectra.grid, spectra.intensities, mass=args.mass, seed=config.seed)
    _emit(out, summary, files)
    manifest = {
        'command': command,
        'software_version': __version__,
        'config': config.to_dict(),
        'priors': cloud.spec.to_dict(),
        'options': extra,
        'inputs': {name: {'path': os.path.abspath(path), 'sha256': _sha256(path)}
                   for name, path in inputs.items()},
        'observations': spectra.names,
        'seed': config.seed,
        'sampler': _trace_summary(cloud),
        'wall_time_s': cloud.wall_time,
        'outputs': {name: _sha256(os.path.join(out, name)) for name in files},
    }
    _write_text(os.path.join(out, 'manifest.json'), json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    print(summary.to_markdown(), end='')
    return EXIT_OK


def cmd_fit(args):
    spectra = read_spectra_csv(args.spectra)
    spec = _priors(args)
    config = _config(args)
    name = args.obs or spectra.names[0]
    selected = spectra.select([name])
    cloud = fit_single(selected.grid, selected.intensities[0], spec, config)
    extra = {'mass': args.mass, 'mode': 'single', 'summary_seed': config.seed}
    return _finish(args, 'fit', cloud, selected, config,
                   {'spectra': args.spectra, 'priors': args.priors}, extra)


def cmd_calibrate(args):
    spectra = read_spectra_csv(args.spectra)
    spec = _priors(args)
    config = _config(args)
    table = read_concentrations_csv(args.concentrations)
    names = args.obs.split(',') if args.obs else spectra.names
    missing = [n for n in names if n not in table]
    if missing:
        raise ConfigurationError(f'no concentration for observation columns {missing}')
    selected = spectra.select(names)
    conc = np.array([table[n] for n in names])
    if np.unique(conc).size == 1:
        print('warning: all observations share one concentration; the slopes are identified '
              'only through the amplitude scale', file=sys.stderr)
    cloud = fit_ibis(selected.grid, selected.intensities, spec, config, concentrations=conc)
    extra = {'mass': args.mass, 'mode': 'calibration', 'summary_seed': config.seed}
    return _finish(args, 'calibrate', cloud, selected, config,
                   {'spectra': args.spectra, 'priors': args.priors,
                    'concentrations': args.concentrations}, extra)


def cmd_simulate(args):
    if args.truth:
        try:
            with open(args.truth, encoding='utf-8') as fp:
                truth = synth.GroundTruth.from_dict(json.load(fp))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f'{args.truth}: cannot read truth ({exc})') from exc
        if args.dilution:
            conc = synth.dilution_concentrations(args.dilution, args.replicates, args.low, args.high)
            truth = replace(truth, concentrations=tuple(conc))
    else:
        conc = None
        if args.dilution:
            conc = synth.dilution_concentrations(args.dilution, args.replicates, args.low, args.high)
        truth = synth.desk_tamra_truth(concentrations=conc)
    if args.zero_noise:
        truth = replace(truth, noise_sd=0.0)
    data = synth.generate(truth, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_spectra_csv(os.path.join(args.out, 'spectra.csv'), data)
    _write_text(os.path.join(args.out, 'truth.json'), truth.dumps() + '\n')
    if truth.concentrations is not None:
        write_concentrations_csv(os.path.join(args.out, 'concentrations.csv'), data.names,
                                 truth.concentrations)
    if not args.truth:
        priors = {'peaks': [{'location_mean': m} for m in synth.DESK_TAMRA_PREDICTIONS]}
        _write_text(os.path.join(args.out, 'priors.json'), json.dumps(priors, indent=2) + '\n')
    print(f'wrote {data.n_obs} spectra x {data.grid.size} wavenumbers to {args.out}')
    return EXIT_OK


def cmd_report(args):
    arc = read_archive(args.archive)
    extra = arc.extra or {}
    mass = extra.get('mass', 0.95) if args.mass is None else args.mass
    seed = extra.get('summary_seed', 0)
    observation = None
    if args.obs:
        if not arc.names or args.obs not in arc.names:
            raise ConfigurationError(f'no observation column named {args.obs!r} in the archive')
        observation = arc.names.index(args.obs)
    summary = summarize(arc.cloud, arc.grid, arc.spectra, mode=extra.get('mode'), mass=mass,
                        seed=seed, observation=observation)
    os.makedirs(args.out, exist_ok=True)
    _emit(args.out, summary, [])
    print(summary.to_markdown(), end='')
    return EXIT_OK


def _sampler_flags(p):
    p.add_argument('--spectra', required=True, help='spectra CSV (wavenumber,obs_1,...)')
    p.add_argument('--priors', required=True, help='priors JSON')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--particles', type=int, default=1000)
    p.add_argument('--target-ess-ratio', type=float, default=0.9)
    p.add_argument('--resample-threshold', type=float, default=0.5)
    p.add_argument('--mutation-steps', type=int, default=5)
    p.add_argument('--proposal-scale', type=float, default=1.0)
    p.add_argument('--mutate-always', action='store_true',
                   help='mutate after every temperature step, not only after resampling')
    p.add_argument('--lambda', dest='lam', type=float, default=None,
                   help='baseline smoothing penalty, overrides the priors file')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--threads', type=int, default=1)
    p.add_argument('--mass', type=float, default=0.95, help='HPD probability content')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='raman-smc',
        description='Bayesian peak and baseline decomposition of Raman spectra by SMC.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('fit', help='fit one spectrum by likelihood tempering')
    _sampler_flags(p)
    p.add_argument('--obs', help='observation column to fit (default: the first)')
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser('calibrate', help='sequential calibration fit over a dilution study')
    _sampler_flags(p)
    p.add_argument('--concentrations', required=True, help='CSV with column,concentration_nM')
    p.add_argument('--obs', help='comma-separated observation columns (default: all)')
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser('simulate', help='generate synthetic spectra with known truth')
    p.add_argument('--out', required=True)
    p.add_argument('--truth', help='truth JSON (default: the built-in five-peak benchmark)')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--zero-noise', action='store_true')
    p.add_argument('--dilution', type=int, default=0, metavar='N',
                   help='simulate a dilution study with N log-spaced concentrations')
    p.add_argument('--replicates', type=int, default=1)
    p.add_argument('--low', type=float, default=0.13, help='lowest concentration, nM')
    p.add_argument('--high', type=float, default=24.7, help='highest concentration, nM')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('report', help='rebuild summaries from a posterior archive')
    p.add_argument('--archive', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--mass', type=float, default=None)
    p.add_argument('--obs', help='observation column for the fitted curves')
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputDataError as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, DomainError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    except ArchiveError as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_ARCHIVE
    except RamanSMCError as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_FAILURE
    except FileNotFoundError as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
