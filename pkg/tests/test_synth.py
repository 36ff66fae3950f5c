import dataclasses

import numpy as np
import pytest

from bandlearn.exceptions import ConfigError, InvalidInputError
from bandlearn.spectral import Bandlimits, SpectralConfig, band_bins, psd, snr
from bandlearn.synth import (
    Clip,
    GenSpec,
    carrier_mask,
    clip_window,
    gen_dataset,
    gen_motion_matrix,
    gen_poisoned,
    gen_positive,
    load_clip,
    load_dataset,
    load_manifest,
    save_clip,
)
from bandlearn.util import derive_rng

from conftest import reference_dft_power

PULSE_BAND = Bandlimits(0.66, 3.0, 0.2)


def mean_trace(clip):
    return clip.data.mean(axis=(1, 2, 3))


def peak_hz_reference(trace, fs, nfft=4096):
    power = reference_dft_power(trace, nfft)
    lo = int(np.ceil(0.3 * nfft / fs))
    hi = int(np.floor((fs / 2 - 0.3) * nfft / fs))
    return (lo + int(np.argmax(power[lo : hi + 1]))) * fs / nfft


class TestClip:
    def test_positive_requires_gt(self):
        with pytest.raises(InvalidInputError):
            Clip(data=np.zeros((4, 2, 2, 1)), fps=30.0, gt_rate=None, label="positive")

    def test_poisoned_forbids_gt(self):
        with pytest.raises(InvalidInputError):
            Clip(data=np.zeros((4, 2, 2, 1)), fps=30.0, gt_rate=np.ones(4), label="poisoned")

    def test_window_slices_gt(self):
        clip = Clip(
            data=np.zeros((10, 2, 2, 1)), fps=30.0, gt_rate=np.arange(10.0), label="positive"
        )
        win = clip_window(clip, 3, 4)
        np.testing.assert_array_equal(win.gt_rate, [3.0, 4.0, 5.0, 6.0])
        assert win.n_frames == 4


class TestGenPositive:
    def test_clean_clip_peak_matches_gt(self):
        # no noise, no drift, full carrier mask: spatial-mean PSD peak = f0
        spec = GenSpec(
            noise_sigma=0.0, drift=0.0, carrier_mask_frac=1.0, distractor=None, seed=3
        )
        clip = gen_positive(spec, derive_rng(3, "clip"))
        f0 = clip.gt_rate[0]
        assert np.all(clip.gt_rate == f0)
        peak = peak_hz_reference(mean_trace(clip), spec.fps)
        assert abs(peak - f0) <= spec.fps / spec.T

    def test_zero_amplitude_has_no_inband_signal(self):
        cfg = SpectralConfig(nfft=512, fs=30.0)
        snrs = []
        for seed in range(20):
            spec = GenSpec(signal_amplitude=0.0, distractor=None, seed=seed)
            clip = gen_positive(spec, derive_rng(seed, "clip"))
            snrs.append(snr(psd(mean_trace(clip), cfg), PULSE_BAND))
        assert np.mean(snrs) < 0.5

    def test_deterministic(self):
        spec = GenSpec(seed=4)
        a = gen_positive(spec, derive_rng(9, "clip"))
        b = gen_positive(spec, derive_rng(9, "clip"))
        np.testing.assert_array_equal(a.data, b.data)
        np.testing.assert_array_equal(a.gt_rate, b.gt_rate)

    def test_gt_rate_stays_in_range(self):
        for seed in range(10):
            spec = GenSpec(drift=0.1, seed=seed)
            clip = gen_positive(spec, derive_rng(seed, "clip"))
            lo, hi = spec.rate_range
            assert np.all(clip.gt_rate >= lo - 1e-12)
            assert np.all(clip.gt_rate <= hi + 1e-12)

    def test_carrier_mask_shared_across_clips(self):
        spec = GenSpec(seed=6)
        mask = carrier_mask(spec)
        assert mask.sum() == max(1, round(0.25 * 6 * 6 * 3))
        np.testing.assert_array_equal(mask, carrier_mask(spec))
        other = carrier_mask(dataclasses.replace(spec, seed=7))
        assert not np.array_equal(mask, other)

    def test_rate_range_outside_nyquist_rejected(self):
        with pytest.raises(ConfigError):
            GenSpec(rate_range=(0.8, 16.0), fps=30.0)


class TestGenPoisoned:
    def test_zero_noise_static_frames(self):
        spec = GenSpec(noise_sigma=0.0, seed=5)
        clip = gen_poisoned(spec, derive_rng(5, "p"))
        assert clip.label == "poisoned"
        assert clip.gt_rate is None
        np.testing.assert_array_equal(clip.data, np.broadcast_to(clip.data[0], clip.data.shape))
        cfg = SpectralConfig(nfft=256, fs=30.0)
        assert np.all(psd(clip.data[:, 0, 0, 0], cfg).power < 1e-18)

    def test_frame_diff_statistics(self):
        spec = GenSpec(noise_sigma=2.0, T=200, seed=1)
        diffs = []
        for seed in range(50):
            clip = gen_poisoned(spec, derive_rng(seed, "p"))
            diffs.append(np.diff(clip.data, axis=0).ravel())
        diffs = np.concatenate(diffs)
        assert abs(np.mean(diffs)) < 0.05
        assert abs(np.std(diffs) - 2.0 * np.sqrt(2)) < 0.05 * 2.0 * np.sqrt(2)

    def test_inband_power_fraction_matches_white_noise(self):
        # mean-trace in-band power fraction ~ band width / Nyquist, +-50%
        cfg = SpectralConfig(nfft=256, fs=30.0)
        expected = (PULSE_BAND.b - PULSE_BAND.a) / 15.0
        fracs = []
        for seed in range(50):
            clip = gen_poisoned(GenSpec(noise_sigma=2.0, seed=seed), derive_rng(seed, "p"))
            spec = psd(mean_trace(clip), cfg)
            k_lo, k_hi = band_bins(spec, PULSE_BAND)
            total = spec.power[1:].sum()
            fracs.append(spec.power[k_lo : k_hi + 1].sum() / total)
        assert 0.5 * expected < np.mean(fracs) < 1.5 * expected

    def test_no_reproducible_inband_peak(self):
        cfg = SpectralConfig(nfft=256, fs=30.0)
        peaks = []
        for seed in range(50):
            clip = gen_poisoned(GenSpec(seed=seed), derive_rng(seed, "p"))
            spec = psd(mean_trace(clip), cfg)
            k_lo, k_hi = band_bins(spec, PULSE_BAND)
            peaks.append(k_lo + int(np.argmax(spec.power[k_lo : k_hi + 1])))
        _, counts = np.unique(peaks, return_counts=True)
        assert counts.max() <= 0.2 * len(peaks)


class TestClipFiles:
    def test_round_trip(self, tmp_path):
        spec = GenSpec(seed=2)
        clip = gen_positive(spec, derive_rng(2, "clip"))
        path = str(tmp_path / "c.sincclip")
        save_clip(path, clip)
        loaded = load_clip(path)
        assert loaded.fps == clip.fps
        assert loaded.label == clip.label
        np.testing.assert_array_equal(loaded.gt_rate, clip.gt_rate)
        np.testing.assert_array_equal(loaded.data, clip.data.astype(np.float32).astype(np.float64))

    def test_magic(self, tmp_path):
        path = str(tmp_path / "c.sincclip")
        save_clip(path, gen_poisoned(GenSpec(seed=1), derive_rng(1, "p")))
        with open(path, "rb") as fh:
            assert fh.read(8) == b"SINCCLIP"

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "bad.sincclip"
        path.write_bytes(b"garbage!")
        with pytest.raises(InvalidInputError):
            load_clip(str(path))


class TestGenDataset:
    def test_empty_manifest(self, tmp_path):
        manifest = gen_dataset(GenSpec(seed=0), 0, str(tmp_path / "d"))
        assert manifest.entries == ()
        assert load_manifest(str(tmp_path / "d" / "manifest.json")).entries == ()

    def test_regeneration_is_byte_identical(self, tmp_path):
        spec = GenSpec(seed=12)
        a_dir, b_dir = str(tmp_path / "a"), str(tmp_path / "b")
        gen_dataset(spec, 3, a_dir)
        gen_dataset(spec, 3, b_dir)
        for name in ("manifest.json", "clip_0000.sincclip", "clip_0002.sincclip"):
            with open(f"{a_dir}/{name}", "rb") as fa, open(f"{b_dir}/{name}", "rb") as fb:
                assert fa.read() == fb.read(), name

    def test_manifest_round_trip(self, tmp_path):
        spec = GenSpec(seed=12)
        out = str(tmp_path / "d")
        manifest = gen_dataset(spec, 8, out)
        assert len(manifest.entries) == 8
        loaded = load_manifest(f"{out}/manifest.json")
        assert loaded.spec == spec
        clips = load_dataset(loaded)
        assert len(clips) == 8
        # source_len_factor 1.5 applied
        assert all(c.n_frames == 180 for c in clips)
        for entry, clip in zip(loaded.entries, clips):
            assert entry.mean_rate_bpm == pytest.approx(60 * np.mean(clip.gt_rate), rel=1e-5)


class TestMotionMatrix:
    def test_noise_free_carriers_are_pure_tone(self):
        rng = derive_rng(0, "m")
        motion = gen_motion_matrix(300, 20, 0.3, 2.0, 0.0, rng, fps=10.0)
        carriers = [j for j in range(20) if np.ptp(motion[:, j]) > 0]
        assert carriers
        # each carrier column lies exactly in the span of {sin, cos} at 0.3 Hz
        t = np.arange(300)
        basis = np.column_stack(
            [np.sin(2 * np.pi * 0.3 * t / 10.0), np.cos(2 * np.pi * 0.3 * t / 10.0)]
        )
        for j in carriers:
            col = motion[:, j]
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            residual = col - basis @ coef
            assert np.max(np.abs(residual)) < 1e-9 * np.ptp(col)

    def test_zero_amplitude_white_columns(self):
        rng = derive_rng(1, "m")
        motion = gen_motion_matrix(4000, 10, 0.3, 0.0, 1.0, rng, fps=10.0)
        cov = np.cov(motion.T)
        off = cov - np.diag(np.diag(cov))
        assert np.all(np.abs(np.diag(cov) - 1.0) < 0.15)
        assert np.all(np.abs(off) < 0.1)

    def test_deterministic(self):
        a = gen_motion_matrix(100, 10, 0.3, 1.0, 0.5, derive_rng(7, "m"), fps=10.0)
        b = gen_motion_matrix(100, 10, 0.3, 1.0, 0.5, derive_rng(7, "m"), fps=10.0)
        np.testing.assert_array_equal(a, b)
