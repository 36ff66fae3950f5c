"""Discrete Fourier analysis of waveforms.

One-sided power spectral densities of mean-subtracted, zero-padded signals,
band discretization, sliding-window peak-rate estimation, and in-band SNR.

Conventions, used consistently by every consumer in this package:
  * the input is mean-subtracted before the transform (the DC bin of the
    stored spectrum is therefore numerically ~0 and is excluded from every
    band, loss and SNR sum);
  * the stored spectrum is the raw one-sided |FFT|^2 -- interior bins are
    NOT doubled, so a unit cosine exactly on bin k of an unpadded length-T
    transform has power (T/2)^2 in that bin;
  * no window taper (rectangular), no sub-bin peak interpolation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidBandError, InvalidInputError

__all__ = [
    "SpectralConfig",
    "Spectrum",
    "Bandlimits",
    "RateSeries",
    "psd",
    "band_bins",
    "stft_rates",
    "snr",
]

# Tolerance for snapping near-integer bin boundaries: 0.1 Hz at nfft=5400,
# fs=30 must map to bin 18 exactly despite 0.1 not being representable.
_BIN_SNAP = 1e-9


@dataclass(frozen=True)
class SpectralConfig:
    """Transform length and sampling rate for PSD computation.

    nfft: zero-padded transform length (>= any signal it is applied to).
    fs: sampling rate in Hz.
    """

    nfft: int
    fs: float

    def __post_init__(self):
        if self.nfft < 2:
            raise InvalidInputError(f"nfft must be >= 2, got {self.nfft}")
        if not (self.fs > 0):
            raise InvalidInputError(f"fs must be > 0, got {self.fs}")

    @property
    def n_bins(self) -> int:
        """Number of one-sided bins (DC through Nyquist)."""
        return self.nfft // 2 + 1

    @property
    def bin_hz(self) -> float:
        """Frequency resolution in Hz per bin."""
        return self.fs / self.nfft


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectral density on the grid k*fs/nfft."""

    power: np.ndarray
    fs: float
    nfft: int

    def __post_init__(self):
        power = np.asarray(self.power, dtype=np.float64)
        object.__setattr__(self, "power", power)
        if power.ndim != 1 or len(power) != self.nfft // 2 + 1:
            raise InvalidInputError(
                f"power must have nfft//2+1 = {self.nfft // 2 + 1} bins, got {power.shape}"
            )
        if not np.all(np.isfinite(power)) or np.any(power < 0):
            raise InvalidInputError("power must be finite and nonnegative")

    @property
    def freqs(self) -> np.ndarray:
        """Bin center frequencies in Hz."""
        return np.arange(len(self.power)) * (self.fs / self.nfft)


@dataclass(frozen=True)
class Bandlimits:
    """Frequency band [a, b] with sparsity half-width delta_f, all in Hz."""

    a: float
    b: float
    delta_f: float

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise InvalidBandError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        if not (self.delta_f > 0):
            raise InvalidBandError(f"delta_f must be > 0, got {self.delta_f}")
        if not (2 * self.delta_f < self.b - self.a):
            raise InvalidBandError(
                f"need 2*delta_f < b - a, got delta_f={self.delta_f}, b-a={self.b - self.a}"
            )

    def validate_for_fs(self, fs: float) -> None:
        if not (self.b < fs / 2):
            raise InvalidBandError(f"band upper edge {self.b} Hz >= Nyquist {fs / 2} Hz")

    def scaled(self, c: float) -> "Bandlimits":
        """Band after frequency resampling by factor c (delta_f scales too)."""
        return Bandlimits(self.a * c, self.b * c, self.delta_f * c)


@dataclass(frozen=True)
class RateSeries:
    """Rates in beats-or-breaths per minute at ascending window-center times."""

    times: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        rates = np.asarray(self.rates, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rates", rates)
        if times.shape != rates.shape or times.ndim != 1:
            raise InvalidInputError("times and rates must be 1-D and the same length")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise InvalidInputError("times must be strictly increasing")


def psd(y: np.ndarray, cfg: SpectralConfig) -> Spectrum:
    """One-sided PSD of a waveform: |FFT(zero-pad(y - mean(y)))|^2.

    Raises InvalidInputError for signals shorter than 2, longer than nfft,
    or containing non-finite values.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise InvalidInputError(f"waveform must be 1-D, got shape {y.shape}")
    if len(y) < 2:
        raise InvalidInputError(f"waveform must have >= 2 samples, got {len(y)}")
    if len(y) > cfg.nfft:
        raise InvalidInputError(f"waveform length {len(y)} exceeds nfft {cfg.nfft}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("waveform contains non-finite values")
    z = y - y.mean()
    spectrum = np.fft.rfft(z, n=cfg.nfft)
    return Spectrum(power=np.abs(spectrum) ** 2, fs=cfg.fs, nfft=cfg.nfft)


def _ceil_snapped(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _BIN_SNAP * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def _floor_snapped(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _BIN_SNAP * max(1.0, abs(x)):
        return int(r)
    return math.floor(x)


def band_bins(spec: Spectrum, band: Bandlimits) -> tuple[int, int]:
    """Inclusive one-sided bin range [k_lo, k_hi] covering [a, b].

    k_lo = ceil(a*nfft/fs) but never below 1 (DC always excluded),
    k_hi = floor(b*nfft/fs) capped at the last bin. Raises InvalidBandError
    when no bin falls inside the band.
    """
    band.validate_for_fs(spec.fs)
    scale = spec.nfft / spec.fs
    k_lo = max(1, _ceil_snapped(band.a * scale))
    k_hi = min(len(spec.power) - 1, _floor_snapped(band.b * scale))
    if k_lo > k_hi:
        raise InvalidBandError(
            f"band [{band.a}, {band.b}] Hz contains no bins at nfft={spec.nfft}, fs={spec.fs}"
        )
    return k_lo, k_hi


def stft_rates(
    y: np.ndarray,
    window_s: float,
    hop_s: float,
    band: Bandlimits,
    cfg: SpectralConfig,
) -> RateSeries:
    """Sliding-window peak rates: 60 * argmax-frequency of each window's in-band PSD.

    Windows are rectangular, length round(window_s*fs), advanced by
    round(hop_s*fs) frames; reported at window-center times.
    """
    y = np.asarray(y, dtype=np.float64)
    wlen = int(round(window_s * cfg.fs))
    hop = int(round(hop_s * cfg.fs))
    if hop < 1:
        raise InvalidInputError(f"hop {hop_s} s is shorter than one frame")
    if wlen < 2:
        raise InvalidInputError(f"window {window_s} s is shorter than two frames")
    if len(y) < wlen:
        raise InvalidInputError(f"waveform ({len(y)} frames) shorter than one window ({wlen})")
    if wlen > cfg.nfft:
        raise InvalidInputError(f"window ({wlen} frames) exceeds nfft {cfg.nfft}")
    times = []
    rates = []
    for start in range(0, len(y) - wlen + 1, hop):
        spec = psd(y[start : start + wlen], cfg)
        k_lo, k_hi = band_bins(spec, band)
        k_peak = k_lo + int(np.argmax(spec.power[k_lo : k_hi + 1]))
        times.append((start + (wlen - 1) / 2) / cfg.fs)
        rates.append(60.0 * k_peak * cfg.bin_hz)
    return RateSeries(times=np.array(times), rates=np.array(rates))


def snr(spec: Spectrum, signal_band: Bandlimits) -> float:
    """In-band power over out-of-band power (DC excluded), eps-floored denominator."""
    k_lo, k_hi = band_bins(spec, signal_band)
    total = float(np.sum(spec.power[1:]))
    p_in = float(np.sum(spec.power[k_lo : k_hi + 1]))
    return p_in / (total - p_in + 1e-12)
