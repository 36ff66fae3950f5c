"""Rate-series metrics, model evaluation helpers, and the whitening baseline.

Predicted and ground-truth rate series are paired by nearest time (within
half the reference hop); MAE/RMSE are in beats-or-breaths per minute and
Pearson's r is computed over the pooled pairs. `zca_baseline` is the
training-free reference method for motion matrices: whiten, score each
component by in-band SNR, average the best three after sign alignment.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .model import ModelParams, forward
from .spectral import Bandlimits, RateSeries, SpectralConfig, Spectrum, band_bins, psd, snr
from .synth import Clip
from .util import atomic_write_text

__all__ = [
    "Metrics",
    "ForgettingReport",
    "rate_metrics",
    "zca_baseline",
    "forgetting_report",
    "predict_rate",
    "predict_waveform",
    "evaluate_clips",
    "clip_gt_bpm",
    "write_rates_csv",
    "read_rates_csv",
]


@dataclass(frozen=True)
class Metrics:
    """MAE/RMSE in bpm plus pooled Pearson's r (None when either series is constant)."""

    mae: float
    rmse: float
    pearson_r: float | None
    n: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "pearson_r": self.pearson_r, "n": self.n}


def _pair_series(pred: RateSeries, gt: RateSeries) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-time pairing of pred against gt, within half the gt hop."""
    if len(pred.times) == 0 or len(gt.times) == 0:
        raise InvalidInputError("no overlapping samples: empty rate series")
    if len(gt.times) > 1:
        half_hop = float(np.median(np.diff(gt.times))) / 2
    else:
        half_hop = math.inf
    idx = np.searchsorted(gt.times, pred.times)
    p_vals, g_vals = [], []
    for i, t in enumerate(pred.times):
        best, best_dt = None, math.inf
        for j in (idx[i] - 1, idx[i]):
            if 0 <= j < len(gt.times):
                dt = abs(gt.times[j] - t)
                if dt < best_dt:
                    best, best_dt = j, dt
        if best is not None and best_dt <= half_hop + 1e-12:
            p_vals.append(pred.rates[i])
            g_vals.append(gt.rates[best])
    if not p_vals:
        raise InvalidInputError("no overlapping samples within half a hop")
    return np.array(p_vals), np.array(g_vals)


def rate_metrics(pred: RateSeries, gt: RateSeries) -> Metrics:
    """MAE, RMSE and Pearson's r over nearest-time-paired rates."""
    p, g = _pair_series(pred, gt)
    err = p - g
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    r: float | None = None
    if len(p) >= 2 and np.std(p) > 0 and np.std(g) > 0:
        r = float(np.corrcoef(p, g)[0, 1])
    return Metrics(mae=mae, rmse=rmse, pearson_r=r, n=len(p))


def zca_baseline(
    motion: np.ndarray, band: Bandlimits, spectral: SpectralConfig, n_components: int = 3
) -> np.ndarray:
    """Whitening baseline for a T x P motion matrix.

    Columns are centered and the covariance eigendecomposition
    W = E diag((lambda + eps)^(-1/2)) E^T (eps = 1e-6 ridge) whitens the data.
    The scored components are the whitened data in the eigenbasis (the
    principal-component scores): rotating back to pixel axes would re-mix a
    source shared by many columns back into every column and flatten the SNR
    contrast the selection relies on. Eigenvector signs are canonicalized
    (largest-|loading| entry positive), so for sources with well-separated
    eigenvalues the output does not depend on the column order of the input
    (near-degenerate noise directions are inherently order-sensitive in any
    eigendecomposition). The top `n_components` by in-band SNR (all, if P is
    smaller) are sign-aligned to the best one and averaged.
    """
    motion = np.asarray(motion, dtype=np.float64)
    if motion.ndim != 2 or motion.shape[0] < 2:
        raise InvalidInputError(f"motion matrix must be (T>=2, P), got {motion.shape}")
    if not np.all(np.isfinite(motion)):
        raise InvalidInputError("motion matrix contains non-finite values")
    t_len = motion.shape[0]
    centered = motion - motion.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / t_len
    eigvals, eigvecs = np.linalg.eigh(cov)
    for j in range(eigvecs.shape[1]):
        pivot = int(np.argmax(np.abs(eigvecs[:, j])))
        if eigvecs[pivot, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    components = centered @ eigvecs @ np.diag((eigvals + 1e-6) ** -0.5)  # (T, P)

    scores = np.array(
        [snr(psd(components[:, j], spectral), band) for j in range(components.shape[1])]
    )
    order = np.argsort(-scores, kind="stable")
    top = order[: min(n_components, components.shape[1])]
    ref = components[:, top[0]]
    picked = []
    for j in top:
        comp = components[:, j]
        sign = -1.0 if float(comp @ ref) < 0 else 1.0
        picked.append(sign * comp)
    return np.mean(picked, axis=0)


def predict_waveform(params: ModelParams, clip: Clip) -> np.ndarray:
    waveform, _ = forward(params, clip.data)
    return waveform


def predict_rate(
    params: ModelParams, clip: Clip, band: Bandlimits, spectral: SpectralConfig
) -> float:
    """Model rate for one clip in bpm: in-band PSD argmax of the predicted waveform."""
    spec = psd(predict_waveform(params, clip), spectral)
    k_lo, k_hi = band_bins(spec, band)
    k_peak = k_lo + int(np.argmax(spec.power[k_lo : k_hi + 1]))
    return 60.0 * k_peak * spectral.bin_hz


def clip_gt_bpm(clip: Clip) -> float:
    if clip.gt_rate is None:
        raise InvalidInputError("clip has no ground-truth rate")
    return 60.0 * float(np.mean(clip.gt_rate))


def evaluate_clips(
    params: ModelParams,
    clips: list[Clip],
    band: Bandlimits,
    spectral: SpectralConfig,
    clip_len: int | None = None,
) -> Metrics:
    """Per-clip rate MAE/RMSE/r for a frozen model over an evaluation set.

    Each clip contributes one prediction (on its first clip_len frames, or
    the whole clip) against the window's mean ground-truth rate.
    """
    if not clips:
        raise InvalidInputError("empty evaluation set")
    preds, gts = [], []
    for clip in clips:
        window = clip
        if clip_len is not None and clip.n_frames > clip_len:
            gt = None if clip.gt_rate is None else clip.gt_rate[:clip_len]
            window = Clip(
                data=clip.data[:clip_len], fps=clip.fps, gt_rate=gt, label=clip.label
            )
        preds.append(predict_rate(params, window, band, spectral))
        gts.append(clip_gt_bpm(window))
    times = np.arange(len(clips), dtype=np.float64)
    return rate_metrics(
        RateSeries(times=times, rates=np.array(preds)),
        RateSeries(times=times, rates=np.array(gts)),
    )


@dataclass(frozen=True)
class ForgettingReport:
    """2x2 metrics grid: (original vs adapted params) x (original vs new eval set)."""

    original_on_original: Metrics
    original_on_new: Metrics
    adapted_on_original: Metrics
    adapted_on_new: Metrics

    def as_dict(self) -> dict:
        return {
            "original_on_original": self.original_on_original.as_dict(),
            "original_on_new": self.original_on_new.as_dict(),
            "adapted_on_original": self.adapted_on_original.as_dict(),
            "adapted_on_new": self.adapted_on_new.as_dict(),
        }


def forgetting_report(
    original_params: ModelParams,
    adapted_params: ModelParams,
    original_eval_set: list[Clip],
    new_eval_set: list[Clip],
    band: Bandlimits,
    spectral: SpectralConfig,
    clip_len: int | None = None,
) -> ForgettingReport:
    """Evaluate both parameter sets on both evaluation sets."""
    return ForgettingReport(
        original_on_original=evaluate_clips(original_params, original_eval_set, band, spectral, clip_len),
        original_on_new=evaluate_clips(original_params, new_eval_set, band, spectral, clip_len),
        adapted_on_original=evaluate_clips(adapted_params, original_eval_set, band, spectral, clip_len),
        adapted_on_new=evaluate_clips(adapted_params, new_eval_set, band, spectral, clip_len),
    )


def write_rates_csv(path: str, series: RateSeries) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time_s", "rate_bpm"])
    for t, r in zip(series.times, series.rates):
        writer.writerow([repr(float(t)), repr(float(r))])
    atomic_write_text(path, buf.getvalue())


def read_rates_csv(path: str) -> RateSeries:
    times, rates = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["time_s", "rate_bpm"]:
            raise InvalidInputError(f"{path}:1: expected header time_s,rate_bpm")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise InvalidInputError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                times.append(float(row[0]))
                rates.append(float(row[1]))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    return RateSeries(times=np.array(times), rates=np.array(rates))
