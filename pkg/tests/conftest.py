import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def reference_dft_power(y: np.ndarray, nfft: int) -> np.ndarray:
    """O(N^2) one-sided |DFT|^2 of the mean-subtracted, zero-padded signal.

    Independent oracle for spectral code: no FFT, direct sums.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.zeros(nfft)
    z[: len(y)] = y - y.mean()
    n = np.arange(nfft)
    power = np.empty(nfft // 2 + 1)
    for k in range(nfft // 2 + 1):
        angle = -2.0 * np.pi * k * n / nfft
        re = float(np.sum(z * np.cos(angle)))
        im = float(np.sum(z * np.sin(angle)))
        power[k] = re * re + im * im
    return power
