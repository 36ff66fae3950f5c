import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandlearn.exceptions import InvalidBandError, InvalidInputError
from bandlearn.spectral import (
    Bandlimits,
    RateSeries,
    SpectralConfig,
    Spectrum,
    band_bins,
    psd,
    snr,
    stft_rates,
)

from conftest import reference_dft_power


class TestPsd:
    def test_constant_waveform_is_all_zero(self):
        spec = psd(np.array([5.0, 5.0, 5.0, 5.0]), SpectralConfig(nfft=8, fs=30.0))
        assert np.all(spec.power == 0.0)

    def test_exact_bin_cosine(self):
        # cos(2*pi*8n/64), T=nfft=64: all one-sided power in bin 8, value (64/2)^2
        n = np.arange(64)
        spec = psd(np.cos(2 * np.pi * 8 * n / 64), SpectralConfig(nfft=64, fs=30.0))
        assert spec.power[8] == pytest.approx(1024.0, rel=1e-12)
        others = np.delete(spec.power, 8)
        assert np.all(others < 1e-9 * spec.power[8])

    def test_matches_reference_dft(self, rng):
        y = rng.normal(size=48)
        spec = psd(y, SpectralConfig(nfft=64, fs=30.0))
        oracle = reference_dft_power(y, 64)
        np.testing.assert_allclose(spec.power, oracle, rtol=1e-9, atol=1e-9)

    def test_parseval(self, rng):
        y = rng.normal(size=128)
        cfg = SpectralConfig(nfft=128, fs=30.0)
        spec = psd(y, cfg)
        two_sided = spec.power[0] + 2 * np.sum(spec.power[1:-1]) + spec.power[-1]
        energy = np.sum((y - y.mean()) ** 2)
        assert abs(energy - two_sided / 128) <= 1e-9 * energy

    def test_time_reversal_invariance(self, rng):
        y = rng.normal(size=100)
        cfg = SpectralConfig(nfft=256, fs=30.0)
        fwd = psd(y, cfg).power
        rev = psd(y[::-1], cfg).power
        np.testing.assert_allclose(rev, fwd, rtol=1e-9, atol=1e-12)

    def test_rejects_bad_inputs(self):
        cfg = SpectralConfig(nfft=16, fs=30.0)
        with pytest.raises(InvalidInputError):
            psd(np.array([1.0]), cfg)
        with pytest.raises(InvalidInputError):
            psd(np.ones(17), cfg)
        with pytest.raises(InvalidInputError):
            psd(np.array([1.0, np.nan, 2.0]), cfg)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_power_nonnegative_and_dc_tiny(self, seed):
        y = np.random.default_rng(seed).normal(size=40)
        spec = psd(y, SpectralConfig(nfft=64, fs=30.0))
        assert np.all(spec.power >= 0)
        total = np.sum(spec.power)
        if total > 0:
            assert spec.power[0] < 1e-9 * total


class TestBandBins:
    def test_paper_grid(self):
        # 0.1 Hz / (30/5400) = bin 18 exactly; 0.5 Hz = bin 90
        spec = Spectrum(power=np.ones(2701), fs=30.0, nfft=5400)
        assert band_bins(spec, Bandlimits(0.1, 0.5, 0.0266)) == (18, 90)

    def test_resolution_is_a_third_bpm(self):
        cfg = SpectralConfig(nfft=5400, fs=30.0)
        assert 60.0 * cfg.bin_hz == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_empty_band_raises(self):
        spec = Spectrum(power=np.ones(33), fs=30.0, nfft=64)
        with pytest.raises(InvalidBandError):
            band_bins(spec, Bandlimits(0.001, 0.002, 0.0004))

    def test_dc_always_excluded(self):
        spec = Spectrum(power=np.ones(33), fs=64.0, nfft=64)
        k_lo, _ = band_bins(spec, Bandlimits(0.2, 3.0, 0.5))
        assert k_lo >= 1


class TestBandlimits:
    def test_invariants(self):
        with pytest.raises(InvalidBandError):
            Bandlimits(2.0, 1.0, 0.1)
        with pytest.raises(InvalidBandError):
            Bandlimits(1.0, 2.0, 0.6)  # 2*delta_f >= b-a
        with pytest.raises(InvalidBandError):
            Bandlimits(0.0, 1.0, 0.1)

    def test_scaled(self):
        band = Bandlimits(0.66, 3.0, 0.2).scaled(1.25)
        assert band.a == pytest.approx(0.825, rel=1e-12)
        assert band.b == pytest.approx(3.75, rel=1e-12)
        assert band.delta_f == pytest.approx(0.25, rel=1e-12)


class TestStftRates:
    def test_stationary_tone_constant_rate(self):
        fs = 30.0
        t = np.arange(int(90 * fs))
        y = np.sin(2 * np.pi * 0.3 * t / fs)
        cfg = SpectralConfig(nfft=5400, fs=fs)
        series = stft_rates(y, 30.0, 1.0, Bandlimits(0.1, 0.5, 0.0266), cfg)
        assert len(series.rates) == 61
        # 18 bpm within one bin width (60*fs/nfft = 1/3 bpm)
        np.testing.assert_allclose(series.rates, 18.0, atol=60 * fs / 5400)
        assert np.all(np.diff(series.times) == pytest.approx(1.0))

    def test_band_edge_tone_included(self):
        fs = 30.0
        t = np.arange(int(60 * fs))
        y = np.sin(2 * np.pi * 0.1 * t / fs)
        cfg = SpectralConfig(nfft=5400, fs=fs)
        series = stft_rates(y, 30.0, 2.0, Bandlimits(0.1, 0.5, 0.0266), cfg)
        np.testing.assert_allclose(series.rates, 6.0, atol=60 * fs / 5400)

    def test_two_segment_signal(self):
        fs = 30.0
        half = int(45 * fs)
        t = np.arange(half)
        y = np.concatenate(
            [np.sin(2 * np.pi * 0.2 * t / fs), np.sin(2 * np.pi * 0.4 * t / fs)]
        )
        cfg = SpectralConfig(nfft=5400, fs=fs)
        series = stft_rates(y, 20.0, 5.0, Bandlimits(0.1, 0.5, 0.0266), cfg)
        early = series.rates[series.times < 20]
        late = series.rates[series.times > 70]
        assert np.all(np.abs(early - 12.0) < 1.0)
        assert np.all(np.abs(late - 24.0) < 1.0)

    def test_too_short_waveform(self):
        cfg = SpectralConfig(nfft=5400, fs=30.0)
        with pytest.raises(InvalidInputError):
            stft_rates(np.ones(100), 30.0, 1.0, Bandlimits(0.1, 0.5, 0.0266), cfg)


class TestSnr:
    def _spectrum(self, in_band, out_band):
        # band [2, 4] Hz on an fs=16, nfft=16 grid: bins 2..4 in-band
        power = np.zeros(9)
        power[2:5] = in_band / 3.0
        power[5:8] = out_band / 3.0
        return Spectrum(power=power, fs=16.0, nfft=16)

    def test_ratio_arithmetic(self):
        spec = self._spectrum(9.0, 3.0)
        assert snr(spec, Bandlimits(2.0, 4.0, 0.9)) == pytest.approx(3.0, rel=1e-9)

    def test_all_power_in_band(self):
        spec = self._spectrum(9.0, 0.0)
        assert snr(spec, Bandlimits(2.0, 4.0, 0.9)) == pytest.approx(9e12, rel=1e-6)

    def test_zero_spectrum(self):
        spec = Spectrum(power=np.zeros(9), fs=16.0, nfft=16)
        assert snr(spec, Bandlimits(2.0, 4.0, 0.9)) == 0.0

    def test_white_noise_band_fraction(self):
        # band covers ~10% of the positive-frequency axis -> SNR ~ 1/9
        fs, nfft = 100.0, 1000
        cfg = SpectralConfig(nfft=nfft, fs=fs)
        band = Bandlimits(10.0, 15.0, 1.0)
        vals = []
        for seed in range(100):
            y = np.random.default_rng(seed).normal(size=nfft)
            vals.append(snr(psd(y, cfg), band))
        mean = np.mean(vals)
        assert 0.5 * (1 / 9) < mean < 1.5 * (1 / 9)


class TestRateSeries:
    def test_requires_increasing_times(self):
        with pytest.raises(InvalidInputError):
            RateSeries(times=np.array([0.0, 0.0]), rates=np.array([60.0, 61.0]))

    def test_requires_matching_lengths(self):
        with pytest.raises(InvalidInputError):
            RateSeries(times=np.array([0.0]), rates=np.array([60.0, 61.0]))
