import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from ramansmc.errors import DomainError
from ramansmc.peaks import (SQRT_2LN2, PeakParams, check_grid, eval_lorentz, eval_pseudo_voigt,
                            eval_rbf, fwhm, mixing_proportion, signature, signature_batch)
from ramansmc.priors import DEFAULT_LORENTZ_SCALE, DEFAULT_RBF_SCALE

scales = st.floats(0.5, 80.0)
offsets = st.floats(-500.0, 500.0)


def half_width_by_bisection(psi, gamma):
    f = lambda d: eval_pseudo_voigt(d, 0.0, psi, gamma) - 0.5
    return brentq(f, 0.0, 50.0 * (psi + gamma), xtol=1e-12)


class TestGrid:

    def test_valid(self):
        grid = check_grid([600, 600.5, 601])
        assert grid.dtype == float

    @pytest.mark.parametrize('values', [[1.0], [2.0, 1.0], [1.0, 1.0], [1.0, np.nan], [-1.0, 2.0]])
    def test_invalid(self, values):
        with pytest.raises(DomainError):
            check_grid(values)


class TestComponents:

    def test_rbf_examples(self):
        assert eval_rbf(880.0, 880.0, 16.0) == 1.0
        assert eval_rbf(880.0 + 16.0 * SQRT_2LN2, 880.0, 16.0) == pytest.approx(0.5, abs=1e-15)
        assert eval_rbf(900.0, 880.0, 10.0) == pytest.approx(np.exp(-2.0), rel=1e-15)
        assert eval_rbf(900.0, 880.0, 10.0) == pytest.approx(0.135335, abs=1e-6)

    def test_lorentz_examples(self):
        assert eval_lorentz(500.0, 500.0, 7.3) == 1.0
        assert eval_lorentz(507.3, 500.0, 7.3) == pytest.approx(0.5, rel=1e-14)
        assert eval_lorentz(500.0 + 2 * 7.3, 500.0, 7.3) == pytest.approx(0.2, rel=1e-14)

    @pytest.mark.parametrize('func', [eval_rbf, eval_lorentz])
    def test_domain_errors(self, func):
        with pytest.raises(DomainError):
            func(1.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            func(1.0, 0.0, -2.0)
        with pytest.raises(DomainError):
            func(np.inf, 0.0, 2.0)
        with pytest.raises(DomainError):
            func(1.0, np.nan, 2.0)

    @given(d=offsets, s=scales)
    def test_symmetry(self, d, s):
        assert eval_rbf(d, 0.0, s) == eval_rbf(-d, 0.0, s)
        assert eval_lorentz(d, 0.0, s) == eval_lorentz(-d, 0.0, s)

    @given(d=st.floats(1e-3, 1e3), s=scales)
    def test_at_most_one(self, d, s):
        assert eval_rbf(d, 0.0, s) < 1.0 or np.exp(-0.5 * (d / s)**2) == 1.0
        assert eval_lorentz(d, 0.0, s) < 1.0

    @given(fw=st.floats(1.0, 100.0), k=st.floats(5.0, 40.0))
    def test_lorentzian_tails_dominate(self, fw, k):
        d = k * fw
        assert eval_lorentz(d, 0.0, fw / 2) > eval_rbf(d, 0.0, fw / (2 * SQRT_2LN2))


class TestMixing:

    def test_pure_limits(self):
        assert mixing_proportion(16.0, 0.0) == 0.0
        assert mixing_proportion(0.0, 20.0) == 1.0

    def test_prior_medians(self):
        eta = mixing_proportion(16.47, 25.27)
        assert 0.0 < eta < 1.0
        # hand evaluation of the width quintic and the mixing cubic
        g, l = 2 * 16.47 * SQRT_2LN2, 2 * 25.27
        width = (g**5 + 2.69269 * g**4 * l + 2.42843 * g**3 * l**2 + 4.47163 * g**2 * l**3
                 + 0.07842 * g * l**4 + l**5) ** 0.2
        q = l / width
        assert eta == pytest.approx(1.36603 * q - 0.47719 * q**2 + 0.11116 * q**3, rel=1e-14)

    def test_both_zero(self):
        with pytest.raises(DomainError):
            mixing_proportion(0.0, 0.0)
        with pytest.raises(DomainError):
            fwhm(0.0, 0.0)

    @given(psi=st.floats(0.0, 100.0), gamma=st.floats(0.0, 100.0))
    def test_in_unit_interval(self, psi, gamma):
        if psi == 0 and gamma == 0:
            return
        assert 0.0 <= mixing_proportion(psi, gamma) <= 1.0


class TestFwhm:

    def test_examples(self):
        assert fwhm(16.47, 0.0) == pytest.approx(38.784, abs=5e-4)
        assert fwhm(0.0, 25.27) == pytest.approx(50.54, abs=1e-12)

    @given(s=st.floats(1e-3, 1e3))
    def test_exact_pure_limits(self, s):
        assert abs(fwhm(s, 0.0) - 2 * s * np.sqrt(2 * np.log(2))) <= 1e-12 * max(1.0, s)
        assert abs(fwhm(0.0, s) - 2 * s) <= 1e-12 * max(1.0, s)

    def test_matched_widths(self):
        gamma = 12.0
        psi = gamma / SQRT_2LN2
        assert fwhm(psi, 0.0) == pytest.approx(fwhm(0.0, gamma), rel=1e-15)

    def test_peak_params_property(self):
        assert PeakParams(1000.0, 16.47, 0.0).fwhm == pytest.approx(38.784, abs=5e-4)

    def test_bisection_matches_for_prior_draws(self, rng):
        psi = DEFAULT_RBF_SCALE.sample(rng, 100)
        gamma = DEFAULT_LORENTZ_SCALE.sample(rng, 100)
        for p, g in zip(psi, gamma):
            measured = 2 * half_width_by_bisection(p, g)
            assert measured == pytest.approx(fwhm(p, g), rel=0.01)


class TestPseudoVoigt:

    def test_reduces_bitwise(self):
        nu = np.linspace(700, 1100, 801)
        assert np.array_equal(eval_pseudo_voigt(nu, 900.0, 14.0, 0.0), eval_rbf(nu, 900.0, 14.0))
        assert np.array_equal(eval_pseudo_voigt(nu, 900.0, 0.0, 21.0), eval_lorentz(nu, 900.0, 21.0))
        peak = PeakParams(900.0, 14.0, 0.0)
        assert np.array_equal(eval_pseudo_voigt(nu, peak), eval_rbf(nu, 900.0, 14.0))

    @given(psi=scales, gamma=scales)
    def test_unit_at_centre(self, psi, gamma):
        assert eval_pseudo_voigt(321.0, 321.0, psi, gamma) == pytest.approx(1.0, abs=1e-15)

    @given(psi=scales, gamma=scales, d=st.floats(1e-3, 1e3))
    def test_below_one_away_from_centre(self, psi, gamma, d):
        assert eval_pseudo_voigt(d, 0.0, psi, gamma) < 1.0

    def test_missing_scales(self):
        with pytest.raises(TypeError):
            eval_pseudo_voigt(1.0, 0.0)
        with pytest.raises(DomainError):
            eval_pseudo_voigt(1.0, 0.0, 0.0, 0.0)


class TestPeakParams:

    @pytest.mark.parametrize('args', [
        (np.nan, 1.0, 1.0, 1.0), (1.0, -1.0, 1.0, 1.0), (1.0, 0.0, 0.0, 1.0), (1.0, 1.0, 1.0, -1.0),
    ])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            PeakParams(*args)


class TestSignature:

    def test_single_peak(self):
        grid = np.linspace(600, 1800, 2401)
        peak = PeakParams(1000.0, 12.0, 18.0, 1.0)
        assert np.allclose(signature(grid, [peak]), eval_pseudo_voigt(grid, peak), rtol=1e-14, atol=0)

    def test_additive(self):
        grid = np.linspace(600, 1800, 2401)
        peak = PeakParams(1000.0, 12.0, 18.0, 1.0)
        assert np.allclose(signature(grid, [peak, peak]), 2 * signature(grid, [peak]),
                           rtol=1e-14, atol=0)

    def test_matches_double_loop(self, rng):
        grid = np.sort(rng.uniform(500, 900, 16))
        peaks = [PeakParams(rng.uniform(500, 900), rng.uniform(1, 30), rng.uniform(1, 30),
                            rng.uniform(0, 100)) for _ in range(3)]
        naive = np.zeros(grid.size)
        for j, nu in enumerate(grid):
            for pk in peaks:
                naive[j] += pk.amplitude * float(eval_pseudo_voigt(nu, pk))
        assert np.allclose(signature(grid, peaks), naive, rtol=1e-12, atol=1e-12)

    @given(c=st.floats(0.0, 1e4))
    def test_linear_in_amplitude(self, c):
        grid = np.linspace(600, 1800, 201)
        peaks = [PeakParams(800.0, 10.0, 5.0, 3.0), PeakParams(1500.0, 0.0, 9.0, 2.0)]
        scaled = [PeakParams(p.location, p.rbf_scale, p.lorentz_scale, c * p.amplitude) for p in peaks]
        assert np.allclose(signature(grid, scaled), c * signature(grid, peaks), rtol=1e-12, atol=1e-300)

    def test_non_negative_and_length(self, rng):
        grid = np.linspace(600, 1800, 301)
        peaks = [PeakParams(rng.uniform(600, 1800), rng.uniform(1, 30), rng.uniform(0, 30),
                            rng.uniform(0, 100)) for _ in range(6)]
        sig = signature(grid, peaks)
        assert sig.shape == grid.shape and np.all(sig >= 0)

    def test_empty(self):
        with pytest.raises(DomainError):
            signature(np.linspace(1, 2, 5), [])

    def test_batch_paths_agree(self, rng, monkeypatch):
        import ramansmc.peaks as peaks_mod
        grid = np.linspace(600, 1800, 501)
        q, p = 7, 4
        loc = rng.uniform(600, 1800, (q, p))
        rbf = rng.uniform(1, 30, (q, p))
        lor = rng.uniform(1, 30, (q, p))
        rbf[0, 0] = 0.0
        lor[1, 2] = 0.0
        amp = rng.uniform(0, 100, (q, p))
        fast = signature_batch(grid, loc, rbf, lor, amp)
        monkeypatch.setattr(peaks_mod, 'HAS_NUMBA', False)
        slow = peaks_mod.signature_batch(grid, loc, rbf, lor, amp)
        assert np.allclose(fast, slow, rtol=1e-12, atol=1e-10)
        for k in range(q):
            ref = signature(grid, [PeakParams(loc[k, j], rbf[k, j], lor[k, j], amp[k, j]) for j in range(p)])
            assert np.allclose(slow[k], ref, rtol=1e-12, atol=1e-10)
