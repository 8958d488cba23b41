import math

import numpy as np
import pytest
import scipy.signal
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from layerhess.local_hessian import LocalHessian, hessian_closed_form, hessian_neuron_blocks
from layerhess.network import FunctionalBlock
from layerhess.numerics import NumericsError
from layerhess.spectral import (HIST_BINS, SpectralSummary, hann, hessian_spectrum,
                                near_zero_fraction, series_summary, shapiro_wilk, symmetry_score,
                                top_peaks, welch_psd)

from conftest import random_block


class TestHessianSpectrum:
    def test_zero_matrix(self):
        s = hessian_spectrum(np.zeros((3, 3)))
        assert (s.rank, s.trace, s.near_zero_fraction) == (0, 0.0, 1.0)
        assert math.isinf(s.condition) and s.singular
        assert s.log_abs_det == -math.inf

    def test_symmetric_diagonal(self):
        s = hessian_spectrum(np.diag([-1.0, 1.0]))
        assert s.symmetry_score == 1.0 and s.rank == 2 and s.condition == 1.0
        assert not s.singular and s.log_abs_det == 0.0

    def test_sigmoid_1x1_rank_one(self):
        blk = FunctionalBlock([[0.5]], [0.0], "sigmoid")
        s = hessian_spectrum(hessian_closed_form(blk, [2.0]))
        sig = 1 / (1 + math.exp(-1))
        trace = sig * (1 - sig) * (1 - 2 * sig) * (2 ** 2 + 1)
        assert s.rank == 1
        assert s.eigenvalues[0] == pytest.approx(trace, rel=1e-12)
        assert s.trace == pytest.approx(-0.454289, abs=1e-6)
        assert math.isinf(s.condition) and s.pseudo_condition == 1.0

    def test_rejects_asymmetric(self):
        with pytest.raises(NumericsError):
            hessian_spectrum(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_neuron_blocks_give_same_spectrum(self, rng):
        blk = random_block(rng, 5, 4, "tanh")
        z = rng.normal(size=4)
        a = hessian_spectrum(hessian_neuron_blocks(blk, z))
        b = hessian_spectrum(hessian_closed_form(blk, z))
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-12)
        assert a.rank == b.rank

    @given(st.integers(1, 12), st.integers(0, 10_000))
    def test_invariants(self, n, seed):
        a = np.random.default_rng(seed).normal(size=(n, n))
        s = hessian_spectrum(a + a.T)
        assert math.isclose(s.trace, np.trace(a + a.T), rel_tol=1e-8, abs_tol=1e-10)
        assert 0 <= s.rank <= n and 0 <= s.near_zero_fraction <= 1
        assert 0 <= s.symmetry_score <= 1
        if s.rank == n:
            assert s.condition >= 1
            assert s.log_abs_det == pytest.approx(np.linalg.slogdet(a + a.T)[1], rel=1e-9, abs=1e-9)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(0.01, 100))
    def test_symmetry_score_invariances(self, lam, c):
        lam = np.array(lam)
        s = symmetry_score(lam)
        assert symmetry_score(lam[::-1]) == pytest.approx(s, abs=1e-12)
        assert symmetry_score(c * lam) == pytest.approx(s, abs=1e-9)

    def test_saturation_raises_near_zero_fraction(self, rng):
        w = rng.normal(size=(6, 5))
        z = rng.normal(size=5)
        u = w @ z
        calm = FunctionalBlock(w / np.max(np.abs(u)), np.zeros(6), "tanh")  # |u| <= 1
        sat = FunctionalBlock(w * 8.0 / np.min(np.abs(u)), np.zeros(6), "tanh")  # |u| >= 8
        assert np.all(np.abs(sat.preactivation(z)) >= 5)
        nz_calm = hessian_spectrum(hessian_closed_form(calm, z)).near_zero_fraction
        nz_sat = hessian_spectrum(hessian_closed_form(sat, z)).near_zero_fraction
        assert nz_sat > nz_calm and nz_sat >= 0.9

    def test_near_zero_threshold_is_scale_aware(self):
        assert near_zero_fraction([1e-7, 1.0]) == 0.5
        assert near_zero_fraction([1e-1, 1e4]) == 0.0
        assert near_zero_fraction([5e-3, 1e4]) == 0.5


class TestWelch:
    def test_zero_signal(self):
        assert np.all(welch_psd(np.zeros(1024)).psd == 0)

    def test_sine_bin_32_and_direct_dft(self):
        n = np.arange(1024)
        x = np.sin(2 * np.pi * 32 / 256 * n)
        res = welch_psd(x)
        assert int(np.argmax(res.psd)) == 32 and res.segments == 7
        seg = x[:256] * hann(256)
        k = np.arange(129)[:, None]
        direct = np.abs(np.sum(seg * np.exp(-2j * np.pi * k * np.arange(256) / 256), axis=1)) ** 2
        assert int(np.argmax(direct)) == 32

    def test_matches_scipy_welch(self):
        x = np.random.default_rng(5).normal(size=3000)
        ours = welch_psd(x)
        f, ref = scipy.signal.welch(x, fs=1.0, window="hann", nperseg=256, noverlap=128,
                                    detrend=False, scaling="density")
        np.testing.assert_allclose(ours.psd, ref, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(ours.frequencies, f)

    def test_white_noise_is_flat(self):
        res = welch_psd(np.random.default_rng(11).normal(size=4096))
        assert np.max(res.psd) / np.median(res.psd) < 10
        assert np.median(res.psd) == pytest.approx(2.0, rel=0.2)

    @pytest.mark.parametrize("k", range(1, 128))
    def test_every_bin_recovered(self, k):
        x = np.sin(2 * np.pi * k / 256 * np.arange(2048))
        assert int(np.argmax(welch_psd(x).psd)) == k

    def test_short_signal_fallback(self):
        res = welch_psd(np.random.default_rng(0).normal(size=100))
        assert res.window == 64 and res.psd.size == 33 and res.segments == 1
        assert welch_psd(np.ones(3)).window == 8

    def test_errors(self):
        with pytest.raises(NumericsError):
            welch_psd([])
        with pytest.raises(NumericsError):
            welch_psd([1.0, np.nan])


class TestPeaks:
    def test_monotone_gives_boundary_peak(self):
        assert [p.bin for p in top_peaks(np.arange(10.0), 5)] == [9]
        assert [p.bin for p in top_peaks(np.arange(10.0)[::-1], 5)] == [0]

    def test_order_by_power(self):
        psd = np.zeros(64)
        psd[10], psd[40] = 3.0, 7.0
        peaks = top_peaks(psd, 5)
        assert [p.bin for p in peaks] == [40, 10]
        assert peaks[0].frequency == pytest.approx(40 / 126)

    def test_sine_peak(self):
        x = np.sin(2 * np.pi * 32 / 256 * np.arange(1024))
        assert top_peaks(welch_psd(x).psd, 1)[0].bin == 32

    def test_errors(self):
        with pytest.raises(NumericsError):
            top_peaks([], 1)
        with pytest.raises(ValueError):
            top_peaks([1.0], 0)


class TestShapiroWilk:
    def test_normal_quantiles(self):
        q = scipy.stats.norm.ppf((np.arange(1, 21) - 0.5) / 20)
        w, p = shapiro_wilk(q)
        assert w > 0.99 and p > 0.5

    def test_uniform_grid_matches_reference(self):
        w, p = shapiro_wilk(np.arange(1, 51))
        ref = scipy.stats.shapiro(np.arange(1, 51))
        assert w == pytest.approx(ref.statistic, abs=1e-4)
        assert p == pytest.approx(ref.pvalue, abs=1e-4)

    def test_exponential_spacing_rejected(self):
        _, p = shapiro_wilk(np.exp(np.arange(1, 21)))
        assert p < 0.01

    @given(st.integers(3, 400), st.integers(0, 10_000))
    def test_agrees_with_scipy(self, n, seed):
        x = np.random.default_rng(seed).standard_t(3, size=n)
        w, p = shapiro_wilk(x)
        ref = scipy.stats.shapiro(x)
        assert 0 < w <= 1 and 0 <= p <= 1
        assert w == pytest.approx(ref.statistic, abs=1e-6)
        assert p == pytest.approx(ref.pvalue, abs=1e-5)

    @pytest.mark.parametrize("x", [[1.0, 2.0], np.ones(10), np.arange(5001.0)])
    def test_errors(self, x):
        with pytest.raises(NumericsError):
            shapiro_wilk(x)


class TestSeriesSummary:
    def test_constant_series(self):
        s = series_summary([1, 1, 1, 1])
        assert (s.mean, s.std) == (1.0, 0.0)
        assert sorted(s.counts)[-1] == 4 and sum(1 for c in s.counts if c) == 1

    def test_population_std(self):
        s = series_summary([0, 1])
        assert (s.mean, s.std) == (0.5, 0.5)

    def test_eigen_series_mean_is_trace_over_dim(self, rng):
        a = rng.normal(size=(9, 9))
        spec = hessian_spectrum(LocalHessian(0, a + a.T))
        s = series_summary(spec.eigenvalues)
        assert s.mean == pytest.approx(spec.trace / 9, abs=1e-10)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=600))
    def test_invariants_and_roundtrip(self, values):
        s = series_summary(values)
        assert s.min <= s.mean <= s.max and s.std >= 0
        assert len(s.bin_edges) == HIST_BINS + 1 and len(s.counts) == HIST_BINS
        assert sum(s.counts) == len(values)
        powers = [p[2] for p in s.top_peaks]
        assert powers == sorted(powers, reverse=True) and len(powers) <= 5
        assert SpectralSummary.from_dict(s.to_dict()) == s

    def test_errors(self):
        with pytest.raises(NumericsError):
            series_summary([])
        with pytest.raises(NumericsError):
            series_summary([1.0, np.inf])
