import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from instances import single_rbf_problem, two_peak_problem
from ramansmc.baseline import build_basis, marginal_log_likelihood
from ramansmc.errors import ConfigurationError, DomainError, StateError
from ramansmc.likelihood import SpectralLikelihood
from ramansmc.priors import Particle, PriorSpec, log_prior_density, sample_prior
from ramansmc.smc import (ParticleCloud, SmcConfig, Target, adapt_temperature, ess,
                          fit_ibis, fit_single, mutate, proposal_factor, residual_resample,
                          reweight, substream)


def bare_cloud(loglik, weights=None):
    loglik = np.asarray(loglik, dtype=float)
    q = loglik.size
    w = np.full(q, 1.0 / q) if weights is None else np.asarray(weights, dtype=float)
    particles = Particle(np.zeros((q, 0)), np.zeros((q, 0)), np.zeros((q, 0)), np.zeros((q, 0)))
    return ParticleCloud(particles, w, loglik[:, None], np.zeros(q), n_seen=1)


class TestConfig:

    @pytest.mark.parametrize('kwargs', [
        {'n_particles': 1}, {'n_particles': 2.5}, {'target_ess_ratio': 1.0}, {'target_ess_ratio': 0.0},
        {'resample_threshold': 0.0}, {'resample_threshold': 1.5}, {'mutation_steps': 0},
        {'proposal_scale': -1.0}, {'threads': 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            SmcConfig(**kwargs)

    def test_defaults(self):
        cfg = SmcConfig()
        assert (cfg.target_ess_ratio, cfg.resample_threshold, cfg.mutation_steps) == (0.9, 0.5, 5)


class TestEss:

    def test_examples(self):
        assert ess(np.full(100, 0.01)) == pytest.approx(100)
        assert ess([1.0, 0.0, 0.0]) == 1.0
        assert ess([0.5, 0.5, 0.0, 0.0]) == 2.0

    def test_zero(self):
        with pytest.raises(DomainError):
            ess(np.zeros(4))


class TestTemperature:

    def test_flat_likelihood_jumps_to_one(self):
        assert adapt_temperature(bare_cloud([-3.0, -3.0, -3.0])) == 1.0

    @pytest.mark.parametrize('c', [50.0, 1e3, 1e6])
    def test_two_particle_closed_form(self, c):
        # ESS(x) = (1 + x)^2 / (1 + x^2) with x = exp(-c dk); ESS = 1.8 gives x = 1/2
        kappa = adapt_temperature(bare_cloud([0.0, -c]), eta=0.9)
        assert kappa == pytest.approx(np.log(2.0) / c, rel=1e-6, abs=1e-12)

    def test_stricter_target_smaller_step(self, rng):
        cloud = bare_cloud(rng.normal(0, 50, 200))
        steps = [adapt_temperature(cloud, eta) for eta in (0.5, 0.9, 0.99, 0.9999)]
        assert all(a > b for a, b in zip(steps, steps[1:]))
        assert steps[-1] < 1e-3

    def test_hits_target_ess(self, rng):
        cloud = bare_cloud(rng.normal(0, 30, 500))
        kappa = adapt_temperature(cloud, 0.9)
        assert kappa < 1
        reweight(cloud, 0.0, kappa)
        assert abs(ess(cloud.weights) - 0.9 * 500) < 1e-2

    def test_at_one(self):
        cloud = bare_cloud([0.0, 1.0])
        cloud.kappa = 1.0
        with pytest.raises(StateError):
            adapt_temperature(cloud)


class TestReweight:

    def test_example(self):
        cloud = reweight(bare_cloud([np.log(2.0), 0.0]), 0.0, 1.0)
        assert np.allclose(cloud.weights, [2 / 3, 1 / 3], rtol=1e-15)
        assert cloud.log_evidence == pytest.approx(np.log(1.5), rel=1e-15)

    def test_no_step(self):
        cloud = bare_cloud([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
        reweight(cloud, 0.3, 0.3)
        assert np.array_equal(cloud.weights, [0.2, 0.3, 0.5])

    @given(shift=st.floats(-1e4, 1e4), dk=st.floats(1e-3, 1.0))
    def test_constant_shift(self, shift, dk):
        ll = np.array([-1.0, -4.0, 0.5, 2.0])
        a = reweight(bare_cloud(ll), 0.0, dk).weights
        b = reweight(bare_cloud(ll + shift), 0.0, dk).weights
        assert np.allclose(a, b, rtol=1e-9, atol=1e-15)

    @given(ll=st.lists(st.floats(-1e5, 1e3), min_size=2, max_size=50), dk=st.floats(1e-6, 1.0))
    def test_normalised(self, ll, dk):
        cloud = reweight(bare_cloud(ll), 0.0, dk)
        assert abs(cloud.weights.sum() - 1) < 1e-12 and np.all(cloud.weights >= 0)

    def test_decreasing(self):
        with pytest.raises(DomainError):
            reweight(bare_cloud([0.0, 1.0]), 0.5, 0.4)


class TestResample:

    @pytest.mark.parametrize('weights, q, counts', [
        ([0.5, 0.5], 4, [2, 2]), ([1.0, 0.0], 3, [3, 0]), ([2 / 3, 1 / 3], 3, [2, 1]),
    ])
    def test_deterministic_cases(self, weights, q, counts):
        for seed in range(5):
            idx = residual_resample(np.array(weights), q, np.random.default_rng(seed))
            assert np.bincount(idx, minlength=len(weights)).tolist() == counts

    def test_unbiased(self):
        w = np.array([0.31, 0.02, 0.17, 0.005, 0.145, 0.2, 0.09, 0.06])
        rng = np.random.default_rng(0)
        counts = np.array([np.bincount(residual_resample(w, 8, rng), minlength=8)
                           for _ in range(10_000)])
        se = counts.std(axis=0, ddof=1) / np.sqrt(10_000)
        assert np.all(np.abs(counts.mean(axis=0) - 8 * w) <= 3 * np.maximum(se, 1e-12))

    def test_all_slots_filled(self, rng):
        w = rng.dirichlet(np.ones(37))
        idx = residual_resample(w, 100, rng)
        assert idx.size == 100 and np.all(np.diff(idx) >= 0)


class TestSubstreams:

    def test_keyed(self):
        a = substream(1, 'mutate', 0, 3).random(4)
        assert np.array_equal(a, substream(1, 'mutate', 0, 3).random(4))
        assert not np.array_equal(a, substream(1, 'mutate', 0, 4).random(4))
        assert not np.array_equal(a, substream(1, 'resample', 0, 3).random(4))
        assert not np.array_equal(a, substream(2, 'mutate', 0, 3).random(4))


class FixedRng:
    """Stand-in generator returning preset arrays."""

    def __init__(self, normals, uniforms):
        self.normals = list(normals)
        self.uniforms = list(uniforms)

    def standard_normal(self, shape):
        return self.normals.pop(0).reshape(shape)

    def random(self, size):
        return self.uniforms.pop(0).reshape(size)


@pytest.fixture
def rbf_setup():
    grid, y, spec, _ = single_rbf_problem()
    model = build_basis(grid, spec.baseline.knot_spacing)
    like = SpectralLikelihood(y[None, :], model, spec.noise)
    return grid, y, spec, like, Target(like, spec)


def make_cloud(particles, like, spec, kappa):
    q = len(particles)
    return ParticleCloud(particles, np.full(q, 1.0 / q), like.loglik(particles),
                         log_prior_density(particles, spec), kappa=kappa, n_seen=1, spec=spec)


class TestMutate:

    def test_transform_round_trip(self, rbf_setup, rng):
        _, _, spec, _, target = rbf_setup
        part = sample_prior(spec, rng, 50)
        back = target.from_unconstrained(target.to_unconstrained(part))
        for name in Particle.FIELDS:
            assert np.allclose(getattr(back, name), getattr(part, name), rtol=1e-12)
        assert target.dim == 3

    def test_acceptance_rule_by_hand(self, rbf_setup):
        grid, y, spec, like, target = rbf_setup
        part = Particle(np.array([[899.0], [901.0]]), np.array([[5.0], [7.0]]),
                        np.zeros((2, 1)), np.array([[18.0], [22.0]]))
        kappa = 0.4
        factor = 0.05 * np.eye(3)
        noise = np.array([[1.0, -0.5, 0.3], [-2.0, 0.4, -1.0]])
        z = target.to_unconstrained(part) + noise @ factor.T
        prop = Particle(z[:, :1], np.exp(z[:, 1:2]), np.zeros((2, 1)),
                        60.0 / (1 + np.exp(-z[:, 2:3])))

        def log_target(p):
            # hand-coded log Jacobian of (location, log psi, logit(A / 60))
            jac = np.log(p.rbf_scale[:, 0]) + np.log(p.amplitude[:, 0]) + np.log1p(-p.amplitude[:, 0] / 60)
            return kappa * like.loglik(p)[:, 0] + log_prior_density(p, spec) + jac

        ratio = log_target(prop) - log_target(part)
        log_u = ratio + np.array([-1e-3, 1e-3])
        cloud = make_cloud(part.copy(), like, spec, kappa)
        mutate(cloud, target, 1, FixedRng([noise], [np.exp(log_u)]), factor=factor)
        assert np.allclose(cloud.particles.location[0], prop.location[0], rtol=1e-14)
        assert cloud.particles.location[1, 0] == 901.0
        assert np.allclose(cloud.loglik, like.loglik(cloud.particles), rtol=1e-12)
        assert np.allclose(cloud.logprior, log_prior_density(cloud.particles, spec), rtol=1e-12)

    def test_zero_step_accepts_everything(self, rbf_setup, rng):
        _, _, spec, like, target = rbf_setup
        part = sample_prior(spec, rng, 100)
        cloud = make_cloud(part.copy(), like, spec, 1.0)
        cloud.trace.append({})
        mutate(cloud, target, 3, rng, factor=np.zeros((3, 3)))
        assert cloud.trace[-1]['acceptance'] == [1.0, 1.0, 1.0]
        assert np.allclose(cloud.particles.location, part.location, rtol=1e-15)

    def test_leaves_prior_invariant(self, rbf_setup):
        _, _, spec, like, target = rbf_setup
        rng = np.random.default_rng(7)
        part = sample_prior(spec, rng, 3000)
        cloud = make_cloud(part, like, spec, 0.0)
        before = {n: getattr(part, n)[:, 0].copy() for n in ('location', 'rbf_scale', 'amplitude')}
        mutate(cloud, target, 10, rng)
        for name, old in before.items():
            new = getattr(cloud.particles, name)[:, 0]
            assert stats.ks_2samp(old, new).pvalue > 1e-3
        lo, hi = spec.location_bounds
        loc = stats.truncnorm((lo - 898) / 5, (hi - 898) / 5, loc=898, scale=5)
        assert stats.kstest(cloud.particles.location[:, 0], loc.cdf).pvalue > 1e-3
        assert stats.kstest(cloud.particles.rbf_scale[:, 0], spec.rbf_scale.cdf).pvalue > 1e-3
        assert stats.kstest(cloud.particles.amplitude[:, 0], stats.uniform(0, 60).cdf).pvalue > 1e-3

    def test_caches_match_recomputation(self, rbf_setup, rng):
        _, _, spec, like, target = rbf_setup
        cloud = make_cloud(sample_prior(spec, rng, 200), like, spec, 0.7)
        mutate(cloud, target, 4, rng)
        assert np.allclose(cloud.loglik, like.loglik(cloud.particles), rtol=1e-12)
        assert np.allclose(cloud.logprior, log_prior_density(cloud.particles, spec), rtol=1e-12)

    def test_proposal_fallback(self):
        z = np.array([[0.0, 0.0], [1.0, 1.0]])
        factor = proposal_factor(z, np.array([0.5, 0.5]))
        assert np.all(np.isfinite(factor))
        cov = factor @ factor.T
        assert np.all(np.linalg.eigvalsh(cov) > 0)


class TestFit:

    def test_single_spectrum(self):
        grid, y, spec, truth = single_rbf_problem()
        cloud = fit_single(grid, y, spec, SmcConfig(n_particles=500, seed=1))
        assert cloud.kappa == 1.0 and cloud.n_seen == 1
        assert abs(cloud.weights.sum() - 1) < 1e-12
        mean_loc = cloud.weights @ cloud.particles.location[:, 0]
        assert abs(mean_loc - 900.0) <= 1.0
        kappas = [rec['kappa'] for rec in cloud.trace]
        assert all(a < b for a, b in zip(kappas, kappas[1:])) and kappas[-1] == 1.0
        assert np.allclose(cloud.loglik, SpectralLikelihood(
            y[None, :], build_basis(grid, 10.0)).loglik(cloud.particles), rtol=1e-12)

    def test_ess_ratio_per_step(self):
        grid, y, spec, _ = single_rbf_problem()
        cloud = fit_single(grid, y, spec, SmcConfig(n_particles=500, seed=2))
        for rec in cloud.trace[:-1]:
            assert rec['ess_after'] == pytest.approx(0.9 * rec['ess_before'], rel=0.05)

    def test_mutate_every_step(self):
        grid, y, spec, _ = single_rbf_problem()
        base = fit_single(grid, y, spec, SmcConfig(n_particles=300, seed=1))
        cloud = fit_single(grid, y, spec, SmcConfig(n_particles=300, seed=1, mutate_always=True))
        assert all(len(rec['acceptance']) == 5 for rec in cloud.trace)
        assert sum('acceptance' in rec for rec in base.trace) < len(base.trace)
        assert abs(cloud.weights @ cloud.particles.location[:, 0] - 900.0) <= 1.0

    def test_deterministic(self):
        grid, y, spec, _ = single_rbf_problem()
        a = fit_single(grid, y, spec, SmcConfig(n_particles=300, seed=5))
        b = fit_single(grid, y, spec, SmcConfig(n_particles=300, seed=5, threads=3))
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.particles.location, b.particles.location)
        assert a.log_evidence == b.log_evidence

    def test_ibis_single_observation_is_fit_single(self):
        grid, y, spec, _ = single_rbf_problem()
        a = fit_single(grid, y, spec, SmcConfig(n_particles=200, seed=9))
        b = fit_ibis(grid, y[None, :], spec, SmcConfig(n_particles=200, seed=9))
        assert np.array_equal(a.particles.amplitude, b.particles.amplitude)

    def test_evidence_without_peaks(self):
        grid, y, _, _ = single_rbf_problem()
        spec = PriorSpec((), amplitude_bound=1.0)
        cloud = fit_single(grid, y, spec, SmcConfig(n_particles=50))
        direct = marginal_log_likelihood(y, build_basis(grid, 10.0)).log_marginal
        assert cloud.log_evidence == pytest.approx(direct, abs=1e-6)
        assert len(cloud.trace) == 1

    def test_replicates_sharpen_slopes(self):
        grid, y, spec, _ = two_peak_problem(n_obs=3)
        conc = np.array([1.0, 1.5, 2.0])
        cfg = SmcConfig(n_particles=600, seed=0)
        joint = fit_ibis(grid, y, spec, cfg, concentrations=conc)

        def sd(cloud):
            w = cloud.weights
            b = cloud.particles.amplitude
            return np.sqrt(w @ (b - w @ b)**2)

        for i in range(3):
            single = fit_ibis(grid, y[i:i + 1], spec, cfg, concentrations=conc[i:i + 1])
            assert np.all(sd(joint) < sd(single))

    def test_saturation_rejected(self):
        grid, y, spec, _ = two_peak_problem(n_obs=2)
        from dataclasses import replace
        with pytest.raises(ConfigurationError, match='monolayer'):
            fit_ibis(grid, y, replace(spec, c_mlc=10.0), SmcConfig(n_particles=20),
                     concentrations=[5.0, 10.0])

    @pytest.mark.parametrize('conc', [[1.0], [1.0, -1.0], [1.0, np.nan]])
    def test_bad_concentrations(self, conc):
        grid, y, spec, _ = two_peak_problem(n_obs=2)
        with pytest.raises(ConfigurationError):
            fit_ibis(grid, y, spec, SmcConfig(n_particles=20), concentrations=conc)

    def test_prior_outside_grid(self):
        grid, y, _, _ = single_rbf_problem()
        with pytest.raises(ConfigurationError, match='outside'):
            fit_single(grid, y, PriorSpec((1200.0,)), SmcConfig(n_particles=20))


@pytest.fixture(scope='module')
def blank_desk_fit():
    from dataclasses import replace
    from ramansmc import synth
    grid = synth.desk_tamra_grid()
    peaks = tuple(replace(p, amplitude=0.0) for p in synth.desk_tamra_truth().peaks)
    truth = synth.GroundTruth(grid, peaks, synth.prior_spline_baseline(grid, seed=0), 2.0)
    y = synth.generate(truth, seed=0).intensities[0]
    spec = PriorSpec(synth.DESK_TAMRA_PREDICTIONS, amplitude_bound=400.0).resolve(grid)
    return fit_single(grid, y, spec, SmcConfig(n_particles=1000, seed=0)), truth.noise_sd


class TestNoSignal:
    """Five-peak model fitted to a spectrum with no peaks in it."""

    def test_intervals_reach_zero(self, blank_desk_fit):
        from ramansmc.calibration import hpd_interval
        cloud, sigma = blank_desk_fit
        for p in range(5):
            lo, _ = hpd_interval(cloud.particles.amplitude[:, p], cloud.weights)
            assert lo < 0.5 * sigma

    @pytest.mark.xfail(strict=True, reason='wide peaks trade off against the flexible baseline; '
                                           'upper bounds reach about 5 sigma')
    def test_upper_bounds_below_detection_threshold(self, blank_desk_fit):
        from ramansmc.calibration import hpd_interval
        cloud, sigma = blank_desk_fit
        for p in range(5):
            _, hi = hpd_interval(cloud.particles.amplitude[:, p], cloud.weights)
            assert hi < 3 * sigma
